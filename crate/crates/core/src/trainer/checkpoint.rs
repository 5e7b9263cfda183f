use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::text::{fmt_f64, parse_f64, parse_key_values, parse_usize, read_to_string, require, write_string};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::networks::{NetConfig, NetworkParams};

/// Parameters and sampling state after a given number of generator updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub config_hash: String,
    pub noise_dim: usize,
    pub params: NetworkParams,
    pub rng: ChaCha8Rng,
}

/// File name of the checkpoint taken after `iteration` updates.
pub fn checkpoint_file_name(iteration: usize) -> String {
    format!("ckpt_{iteration:06}.txt")
}

pub const FINAL_CHECKPOINT: &str = "final.txt";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(path: &Path, s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Parse {
        path: path.to_path_buf(),
        detail: format!("rng_seed must be 64 hex digits, got '{s}'"),
    };
    if s.len() != 64 || !s.is_ascii() {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

impl Checkpoint {
    pub fn net_config(&self) -> Result<NetConfig> {
        self.params.infer_config(self.noise_dim)
    }

    pub fn to_text(&self) -> Result<String> {
        let cfg = self.net_config()?;
        let mut s = String::new();
        let _ = writeln!(s, "iteration={}", self.iteration);
        let _ = writeln!(s, "config_hash={}", self.config_hash);
        let _ = writeln!(s, "rep_dim={}", cfg.rep_dim);
        let _ = writeln!(s, "noise_dim={}", cfg.noise_dim);
        let _ = writeln!(s, "feat_dim={}", cfg.feat_dim);
        let _ = writeln!(s, "n_seen_classes={}", cfg.n_seen_classes);
        let _ = writeln!(s, "rng_seed={}", hex(&self.rng.get_seed()));
        let _ = writeln!(s, "rng_stream={}", self.rng.get_stream());
        let _ = writeln!(s, "rng_word_pos={}", self.rng.get_word_pos());
        for (name, t) in self.params.named_tensors() {
            let _ = writeln!(s, "tensor {name} {} {}", t.rows(), t.cols());
            for i in 0..t.rows() {
                let row: Vec<String> = t.row(i).iter().map(|&v| fmt_f64(v)).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        Ok(s)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Checkpoint> {
        let perr = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            detail,
        };
        let mut lines = text.lines().peekable();
        let mut header = String::new();
        while let Some(l) = lines.peek() {
            if l.starts_with("tensor ") {
                break;
            }
            header.push_str(l);
            header.push('\n');
            lines.next();
        }
        let kv = parse_key_values(path, &header)?;
        let get = |k: &str| require(path, &kv, k);
        let iteration = parse_usize(path, get("iteration")?)?;
        let noise_dim = parse_usize(path, get("noise_dim")?)?;
        let mut rng = ChaCha8Rng::from_seed(unhex(path, get("rng_seed")?)?);
        rng.set_stream(
            get("rng_stream")?
                .parse()
                .map_err(|_| perr("bad rng_stream".into()))?,
        );
        rng.set_word_pos(
            get("rng_word_pos")?
                .parse()
                .map_err(|_| perr("bad rng_word_pos".into()))?,
        );

        let mut tensors = Vec::new();
        while let Some(l) = lines.next() {
            if l.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "tensor" {
                return Err(perr(format!("expected 'tensor <name> <rows> <cols>', got '{l}'")));
            }
            let (rows, cols) = (parse_usize(path, parts[2])?, parse_usize(path, parts[3])?);
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| perr(format!("tensor {} ends early", parts[1])))?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(parse_f64(path, tok)?);
                }
                if data.len() - before != cols {
                    return Err(perr(format!("tensor {} row has {} values, expected {cols}", parts[1], data.len() - before)));
                }
            }
            tensors.push((parts[1].to_string(), Tensor::new(rows, cols, data)?));
        }
        let params = NetworkParams::from_named(tensors)?;
        let ckpt = Checkpoint {
            iteration,
            config_hash: get("config_hash")?.to_string(),
            noise_dim,
            params,
            rng,
        };
        let cfg = ckpt.net_config()?;
        for (key, actual) in [
            ("rep_dim", cfg.rep_dim),
            ("feat_dim", cfg.feat_dim),
            ("n_seen_classes", cfg.n_seen_classes),
        ] {
            let declared = parse_usize(path, get(key)?)?;
            if declared != actual {
                return Err(perr(format!("{key}={declared} but tensors imply {actual}")));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::parse(path, &read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::init_params;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let cfg = NetConfig::new(4, 3, 6, 5).with_hidden(vec![7], vec![8], vec![5, 4]);
        let mut params = init_params(&cfg, 9).unwrap();
        params.generator.layers[0].bias.data_mut()[0] = 1e-300;
        params.generator.layers[0].bias.data_mut()[1] = -0.1 / 3.0;
        params.regressor.layers[2].bias.data_mut()[0] = 123456.789e10;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.set_stream(4);
        for _ in 0..13 {
            let _: u32 = rng.random();
        }
        Checkpoint {
            iteration: 40,
            config_hash: "abc".into(),
            noise_dim: 3,
            params,
            rng,
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(checkpoint_file_name(40));
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, c);
        let (mut a, mut b) = (c.rng.clone(), back.rng.clone());
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        assert_eq!(back.to_text().unwrap(), c.to_text().unwrap());
    }

    #[test]
    fn header_mismatch_rejected() {
        let text = sample().to_text().unwrap().replace("feat_dim=6", "feat_dim=7");
        assert!(Checkpoint::parse(Path::new("x"), &text).is_err());
        let text = sample().to_text().unwrap();
        let truncated: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::parse(Path::new("x"), &truncated).is_err());
    }

    #[test]
    fn file_names() {
        assert_eq!(checkpoint_file_name(5), "ckpt_000005.txt");
    }
}
