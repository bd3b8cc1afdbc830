use std::time::Instant;

use spectroflow::cnn::{NetworkKind, NetworkModel, Tensor4};

fn main() {
    for kind in [NetworkKind::VNet, NetworkKind::GNet, NetworkKind::RNet] {
        let model = NetworkModel::seeded(kind, 3, 1).unwrap();
        let x = Tensor4::zeros([1, 3, 128, 128]);
        model.forward(&x).unwrap();
        let t = Instant::now();
        for _ in 0..3 {
            model.forward(&x).unwrap();
        }
        println!("{kind}: {:.1} ms/forward, {} params", t.elapsed().as_secs_f64() * 1000.0 / 3.0, model.parameter_count());
    }
}
