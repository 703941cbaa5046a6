use scalesplit::msvq::{train_vqvae, MsvqConfig, MsvqTrainConfig};
use scalesplit::tensor::Tensor;

fn main() {
    let img = {
        let mut data = vec![0.15; 16 * 16 * 3];
        for y in 0..16 {
            for x in 0..16 {
                let p = (y * 16 + x) * 3;
                if x >= 8 {
                    data[p..p + 3].copy_from_slice(&[0.75, 0.75, 0.7]);
                }
                if (4..8).contains(&y) && (4..8).contains(&x) {
                    data[p..p + 3].copy_from_slice(&[0.9, 0.1, 0.1]);
                }
            }
        }
        Tensor::from_vec(vec![16, 16, 3], data)
    };
    let corpus = vec![img; 8];
    let cfg = MsvqConfig {
        image_side: 16,
        d_code: 4,
        vocab: 16,
        schedule: vec![1, 2, 4],
        enc_widths: (8, 12),
        dec_widths: (12, 8, 6),
        monotone_guard: true,
    };
    for epochs in [30, 60, 120, 240] {
        let train = MsvqTrainConfig { epochs, batch_size: 4, lr: 3e-3, commitment: 0.25 };
        let (model, report) = train_vqvae(&corpus, cfg.clone(), &train, 7).unwrap();
        let mse = scalesplit::msvq::reconstruction_mse(&model, &corpus[..1]).unwrap();
        println!("epochs {epochs}: final_loss {:.5} holdout_mse {:.5} usage {:.2} guards {}",
            report.final_train_loss, mse, report.codebook_usage, report.guard_triggers);
    }
}
