use super::lpc::rms;
use super::vad::remove_silence;
use crate::error::{Error, Result};

pub const BABBLE_TALKERS: usize = 6;

/// Babble: every talker has silence removed and is scaled to unit RMS; the
/// talkers are trimmed to the shortest and averaged sample by sample.
pub fn gen_babble(signals: &[Vec<f64>]) -> Result<Vec<f64>> {
    if signals.len() < BABBLE_TALKERS {
        return Err(Error::invalid(
            "babble",
            format!("{} talkers, need at least {BABBLE_TALKERS}", signals.len()),
        ));
    }
    let mut talkers = Vec::with_capacity(signals.len());
    for (i, s) in signals.iter().enumerate() {
        let mut v = remove_silence(s);
        let r = rms(&v);
        if r == 0.0 {
            return Err(Error::invalid("babble", format!("talker {i} is silent")));
        }
        v.iter_mut().for_each(|x| *x /= r);
        talkers.push(v);
    }
    let len = talkers.iter().map(Vec::len).min().unwrap_or(0);
    let n = talkers.len() as f64;
    Ok((0..len).map(|i| talkers.iter().map(|t| t[i]).sum::<f64>() / n).collect())
}
