//! Server side of the bridge protocol, for any in-process scorer that
//! exposes full logit vectors. Used to run the synthetic oracles as an
//! external process and to record protocol fixtures.

use std::io::{self, BufRead, Write};

use super::protocol::{self, Handshake, ProtocolError, Reply, Request};
use super::{score_all_classes, score_images, Scorer};
use crate::tensor::ImageTensor;

fn decode_batch(
    values: &[f32],
    n: usize,
    shape: (usize, usize, usize),
) -> Result<Vec<ImageTensor>, String> {
    let (h, w, c) = shape;
    let per = h * w * c;
    (0..n)
        .map(|k| {
            let data = values[k * per..(k + 1) * per]
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            ImageTensor::new(h, w, c, data).map_err(|e| e.to_string())
        })
        .collect()
}

/// Answer requests until the input stream closes.
///
/// The scorer must report `input_shape` and `num_classes`.
pub fn serve<S, R, W>(scorer: &S, mut input: R, mut output: W) -> Result<(), ProtocolError>
where
    S: Scorer + ?Sized,
    R: BufRead,
    W: Write,
{
    let shape = scorer
        .input_shape()
        .ok_or_else(|| ProtocolError::Malformed("scorer has no fixed input shape".into()))?;
    let num_classes = scorer
        .num_classes()
        .ok_or_else(|| ProtocolError::Malformed("scorer has no class vector".into()))?;
    let per_image = shape.0 * shape.1 * shape.2;

    loop {
        let line = match protocol::read_line(&mut input) {
            Ok(line) => line,
            Err(ProtocolError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };
        let req = match protocol::parse_request(&line) {
            Ok(req) => req,
            Err(_) => {
                // payload length is unknown, so the stream cannot be resynchronized
                protocol::write_reply(
                    &mut output,
                    &Reply::Err(format!("unknown request {line:?}")),
                )?;
                return Err(ProtocolError::Malformed(line));
            }
        };
        let reply = match req {
            Request::Hello => Reply::Ok(Handshake {
                height: shape.0,
                width: shape.1,
                channels: shape.2,
                num_classes,
            }),
            Request::Score { n, class_index } => {
                let payload = protocol::read_f32s(&mut input, n * per_image)?;
                match decode_batch(&payload, n, shape)
                    .and_then(|b| score_images(scorer, &b, class_index).map_err(|e| e.to_string()))
                {
                    Ok(v) => Reply::Logits(v.into_iter().map(|x| x as f32).collect()),
                    Err(msg) => Reply::Err(msg),
                }
            }
            Request::LogitsAll { n } => {
                let payload = protocol::read_f32s(&mut input, n * per_image)?;
                match decode_batch(&payload, n, shape)
                    .and_then(|b| score_all_classes(scorer, &b).map_err(|e| e.to_string()))
                {
                    Ok(rows) => {
                        Reply::Logits(rows.into_iter().flatten().map(|x| x as f32).collect())
                    }
                    Err(msg) => Reply::Err(msg),
                }
            }
        };
        protocol::write_reply(&mut output, &reply)?;
    }
}

/// [`serve`] on the process's own stdin/stdout.
pub fn serve_stdio<S: Scorer + ?Sized>(scorer: &S) -> Result<(), ProtocolError> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve(scorer, stdin.lock(), io::BufWriter::new(stdout.lock()))
}
