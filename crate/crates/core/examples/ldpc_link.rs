//! Frame error rate of the residual modem over AWGN and Rayleigh channels
//! for each bundled code and 16/64-QAM.
//!
//! `cargo run --release --example ldpc_link`

use multihop_sim::channel::{
    mmse_equalize_unbiased, rayleigh_transmit, snr_to_noise_variance, ChannelRealization,
};
use multihop_sim::modem::{QamConstellation, ResidualModem, ShippedCode, HEADER_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAMES: u64 = 200;

fn main() -> multihop_sim::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("code       qam  fading    snr_db  FER");
    for code in [ShippedCode::Rate12Long, ShippedCode::Rate23Long] {
        for order in [16, 64] {
            let modem = ResidualModem::new(code.load()?, QamConstellation::new(order)?, 50);
            let bits = modem.code().k() - HEADER_BITS;
            for (fading, snr) in [
                ("awgn", 8.0),
                ("awgn", 14.0),
                ("rayleigh", 14.0),
                ("rayleigh", 20.0),
            ] {
                let mut errors = 0;
                for f in 0..FRAMES {
                    let payload: Vec<u8> = (0..bits).map(|_| rng.random_range(0..2)).collect();
                    let tx = modem.modulate_frame(&payload)?;
                    let var = snr_to_noise_variance(snr);
                    let ch = match fading {
                        "awgn" => ChannelRealization::awgn(tx.len(), var, f)?,
                        _ => ChannelRealization::rayleigh(tx.len(), var, f)?,
                    };
                    let (eq, v) = mmse_equalize_unbiased(&rayleigh_transmit(&tx, &ch)?, &ch)?;
                    let out = modem.demodulate_frame(&eq, &v)?;
                    errors += usize::from(out.payload.as_deref() != Ok(&payload[..]));
                }
                println!(
                    "{:9}  {order:3}  {fading:8}  {snr:6.1}  {:.3}",
                    code.name(),
                    errors as f64 / FRAMES as f64
                );
            }
        }
    }
    Ok(())
}
