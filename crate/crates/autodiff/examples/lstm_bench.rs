use ipdnet_autodiff::{init, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use std::time::Instant;
fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for &(b, l, i, h) in &[(192usize, 256usize, 36usize, 16usize), (2048, 24, 36, 32)] {
        let mut store = ParamStore::<f32>::new();
        let wi = store.add("wi", init::uniform_fan_in(&mut rng, &[i, 4 * h], i)).unwrap();
        let wh = store.add("wh", init::orthogonal_blocks(&mut rng, h, 4)).unwrap();
        let bb = store.add("b", Tensor::zeros(&[4 * h])).unwrap();
        let x: Tensor<f32> = init::uniform_fan_in(&mut rng, &[b, l, i], 1);
        let t0 = Instant::now();
        for _ in 0..3 {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let (a, c, d) = (g.param(&store, wi), g.param(&store, wh), g.param(&store, bb));
            let y = g.lstm(xv, a, c, d, false).unwrap();
            let s = g.sum(y);
            g.backward(s, &mut store).unwrap();
        }
        let dt = t0.elapsed().as_secs_f64() / 3.0;
        let flops = (b * l) as f64 * 2.0 * 4.0 * h as f64 * (i + h) as f64 * 3.0;
        println!("b={b} l={l} i={i} h={h}: {:.3}s  ~{:.2} GFLOP/s", dt, flops / dt / 1e9);
    }
}
