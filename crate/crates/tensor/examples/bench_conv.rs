use std::time::Instant;
use uniisp_tensor::kernels::conv::*;
use uniisp_tensor::Tensor;

fn main() {
    for &(n, c, hw) in &[(8usize, 16usize, 64usize), (8, 8, 64), (8, 32, 32)] {
        let x = Tensor::<f32>::from_vec(&[n, c, hw, hw], (0..n * c * hw * hw).map(|i| (i % 13) as f32 * 0.1).collect()).unwrap();
        let w = Tensor::<f32>::from_vec(&[c, c, 3, 3], (0..c * c * 9).map(|i| (i % 7) as f32 * 0.01).collect()).unwrap();
        let t = Instant::now();
        let reps = 5;
        for _ in 0..reps {
            let y = conv2d_forward(&x, &w, None, ConvSpec::same(3)).unwrap();
            let _ = conv2d_backward(&x, &w, ConvSpec::same(3), &y, true).unwrap();
        }
        let dt = t.elapsed().as_secs_f64() / reps as f64;
        let flops = 3.0 * 2.0 * (n * c * c * 9 * hw * hw) as f64;
        println!("n{n} c{c} hw{hw}: {:.1} ms  {:.1} GFLOP/s", dt * 1e3, flops / dt / 1e9);
    }
}
