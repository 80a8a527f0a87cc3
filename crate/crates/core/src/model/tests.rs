use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{embed_tokens, encoder_layer, mhsa, mixture, network, Weights};
use super::*;
use crate::io::synth_motion;
use crate::tensor::gradcheck::check;
use crate::tensor::Var;

fn cfg(layers: usize, heads: usize, d_model: usize, joints: usize, t_max: usize) -> ModelConfig {
    ModelConfig { layers, heads, d_model, d_ffn: 2 * d_model, t_max, joints, ..Default::default() }
}

fn tiny() -> ModelConfig {
    cfg(2, 2, 16, 3, 8)
}

fn labels(s: &str) -> CompletionMask {
    CompletionMask::new(
        s.chars()
            .map(|c| match c {
                'K' => FrameLabel::Keyframe,
                'U' => FrameLabel::Unknown,
                _ => FrameLabel::Ignored,
            })
            .collect(),
    )
    .unwrap()
}

fn rand_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn row(t: &Tensor<f64>, r: usize) -> &[f64] {
    let f = *t.shape().last().unwrap();
    &t.data()[r * f..(r + 1) * f]
}

#[test]
fn zero_input_gives_zero_tokens() {
    let c = tiny();
    let store = ParamStore::<f64>::init(&c, 0).unwrap();
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), c.layers).unwrap();
    let x = tape.constant(Tensor::zeros(&[1, 5, c.input_dim()]));
    assert!(embed_tokens(x, &w).unwrap().value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn token_shape_at_full_size() {
    let c = ModelConfig::default();
    let store = ParamStore::<f32>::init(&c, 0).unwrap();
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), c.layers).unwrap();
    let x = tape.constant(Tensor::zeros(&[1, 50, 22 * 7]));
    assert_eq!(embed_tokens(x, &w).unwrap().shape(), vec![1, 50, 256]);
}

#[test]
fn token_depends_on_three_frames_only() {
    let c = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let store = ParamStore::<f64>::init(&c, 1).unwrap();
    let x0 = rand_input(&mut rng, &[1, 12, c.input_dim()]);
    let mut x1 = x0.clone();
    let d = c.input_dim();
    for v in &mut x1.data_mut()[6 * d..7 * d] {
        *v += 0.5;
    }
    let tokens = |x: &Tensor<f64>| {
        let tape = Tape::new();
        let w = Weights::from_vars(&store.bind(&tape, false), c.layers).unwrap();
        embed_tokens(tape.constant(x.clone()), &w).unwrap().value()
    };
    let (a, b) = (tokens(&x0), tokens(&x1));
    for t in 0..12 {
        let changed = row(&a, t) != row(&b, t);
        assert_eq!(changed, (5..=7).contains(&t), "frame {t}");
    }
}

fn mixture_of(store: &ParamStore<f64>, c: &ModelConfig, m: &CompletionMask) -> Tensor<f64> {
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), c.layers).unwrap();
    mixture(&w, &[m]).unwrap().value()
}

#[test]
fn mixture_rows() {
    let c = cfg(1, 2, 8, 2, 40);
    let store = ParamStore::<f64>::init(&c, 2).unwrap();
    let pos = store.get("position").unwrap();
    let kf = store.get("keyframe").unwrap();

    let e = mixture_of(&store, &c, &labels("KKKK"));
    for t in 0..4 {
        let want: Vec<f64> = row(pos, t).iter().zip(row(kf, 0)).map(|(a, b)| a + b).collect();
        assert_eq!(row(&e, t), want.as_slice());
    }

    let e2 = mixture_of(&store, &c, &labels("KKUK"));
    for t in 0..4 {
        assert_eq!(row(&e, t) == row(&e2, t), t != 2);
    }

    // 10 keyframes, 5 unknown, 1 keyframe, 24 ignored
    let m = labels(&format!("{}{}K{}", "K".repeat(10), "U".repeat(5), "I".repeat(24)));
    let e = mixture_of(&store, &c, &m);
    let mut classes: Vec<(Vec<f64>, usize)> = Vec::new();
    for t in 0..40 {
        let addend: Vec<f64> = row(&e, t).iter().zip(row(pos, t)).map(|(a, p)| a - p).collect();
        match classes.iter_mut().find(|(v, _)| v.iter().zip(&addend).all(|(a, b)| (a - b).abs() < 1e-12)) {
            Some((_, n)) => *n += 1,
            None => classes.push((addend, 1)),
        }
    }
    let counts: Vec<usize> = classes.iter().map(|c| c.1).collect();
    assert_eq!(counts, vec![11, 5, 24]);
}

#[test]
fn mixture_rejects_overlong_mask() {
    let c = tiny();
    let store = ParamStore::<f64>::init(&c, 0).unwrap();
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), c.layers).unwrap();
    assert!(mixture(&w, &[&labels("KUUUUUUUUK")]).is_err());
}

fn layer_store(c: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::<f64>::init(c, seed).unwrap();
    // non-trivial biases and norm parameters
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (name, t) in s.names().to_vec().into_iter().zip(s.tensors_mut()) {
        if name.starts_with("layer") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5) + if name.contains("gamma") { 1.0 } else { 0.0 });
        }
    }
    s
}

#[test]
fn single_token_attention_is_value_projection() {
    let c = cfg(1, 2, 4, 1, 4);
    let store = layer_store(&c, 3);
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = rand_input(&mut rng, &[1, 1, 4]);
    let mut probe = Vec::new();
    let out = mhsa(tape.constant(h.clone()), &w.layers[0], 2, Some(&mut probe)).unwrap().value();
    assert!(probe[0].data().iter().all(|&a| a == 1.0));
    let lin = |x: &[f64], wname: &str, bname: &str| -> Vec<f64> {
        let (wt, b) = (store.get(wname).unwrap(), store.get(bname).unwrap());
        let n = b.len();
        (0..n)
            .map(|o| b.data()[o] + x.iter().enumerate().map(|(i, xi)| xi * wt.data()[i * n + o]).sum::<f64>())
            .collect()
    };
    let v = lin(h.data(), "layer0.value.weight", "layer0.value.bias");
    let want = lin(&v, "layer0.proj.weight", "layer0.proj.bias");
    for (a, b) in out.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn identical_tokens_attend_uniformly() {
    let c = cfg(1, 2, 8, 1, 6);
    let store = layer_store(&c, 4);
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), 1).unwrap();
    let r: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
    let h = Tensor::new(vec![1, 5, 8], r.iter().cycle().take(40).copied().collect()).unwrap();
    let mut probe = Vec::new();
    mhsa(tape.constant(h), &w.layers[0], 2, Some(&mut probe)).unwrap();
    assert!(probe[0].data().iter().all(|&a| (a - 0.2).abs() < 1e-12));
}

/// Step-by-step loops for T=3, F=4, M=2 with fixed weights.
#[test]
fn attention_matches_manual_forward() {
    let c = cfg(1, 2, 4, 1, 3);
    let mut store = ParamStore::<f64>::init(&c, 0).unwrap();
    let fill = |t: &mut Tensor<f64>, k: usize| {
        t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (((i * 7 + k * 3) % 11) as f64 - 5.0) / 10.0)
    };
    for (k, n) in ["query", "key", "value", "proj"].iter().enumerate() {
        fill(store.get_mut(&format!("layer0.{n}.weight")).unwrap(), k);
        fill(store.get_mut(&format!("layer0.{n}.bias")).unwrap(), k + 5);
    }
    let h = [[0.1, -0.2, 0.3, 0.4], [0.5, 0.0, -0.6, 0.2], [-0.3, 0.8, 0.1, -0.1]];

    let get = |n: &str| store.get(n).unwrap().data().to_vec();
    let lin = |w: &[f64], b: &[f64], x: &[f64; 4]| -> [f64; 4] {
        let mut o = [0.0; 4];
        for j in 0..4 {
            o[j] = b[j];
            for i in 0..4 {
                o[j] += x[i] * w[i * 4 + j];
            }
        }
        o
    };
    let q: Vec<[f64; 4]> = h.iter().map(|x| lin(&get("layer0.query.weight"), &get("layer0.query.bias"), x)).collect();
    let k: Vec<[f64; 4]> = h.iter().map(|x| lin(&get("layer0.key.weight"), &get("layer0.key.bias"), x)).collect();
    let v: Vec<[f64; 4]> = h.iter().map(|x| lin(&get("layer0.value.weight"), &get("layer0.value.bias"), x)).collect();
    let alpha = 2f64.sqrt();
    let mut ctx = [[0.0; 4]; 3];
    for head in 0..2 {
        let cols = head * 2..head * 2 + 2;
        for i in 0..3 {
            let s: Vec<f64> = (0..3).map(|j| cols.clone().map(|d| q[i][d] * k[j][d]).sum::<f64>() / alpha).collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in cols.clone() {
                ctx[i][d] = (0..3).map(|j| e[j] / z * v[j][d]).sum();
            }
        }
    }
    let want: Vec<f64> =
        ctx.iter().flat_map(|x| lin(&get("layer0.proj.weight"), &get("layer0.proj.bias"), x)).collect();

    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), 1).unwrap();
    let hv = tape.constant(Tensor::new(vec![1, 3, 4], h.concat()).unwrap());
    let got = mhsa(hv, &w.layers[0], 2, None).unwrap().value();
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn zero_sublayers_pass_through_two_norms() {
    let c = cfg(1, 2, 8, 1, 6);
    let mut store = ParamStore::<f64>::init(&c, 5).unwrap();
    for (name, t) in store.names().to_vec().into_iter().zip(store.tensors_mut()) {
        if name.starts_with("layer0.") && !name.contains("norm") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = rand_input(&mut rng, &[1, 6, 8]);
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), 1).unwrap();
    let hv = tape.constant(h);
    let out = encoder_layer(hv, &w.layers[0], 2, None).unwrap();
    let (g, b) = w.layers[0].norm1;
    let eps = network::NORM_EPS;
    let twice = hv.layer_norm(g, b, eps).unwrap().layer_norm(g, b, eps).unwrap();
    assert_eq!(out.value(), twice.value());
    assert_eq!(out.shape(), vec![1, 6, 8]);
}

#[test]
fn layer_equals_composed_primitives() {
    let c = cfg(1, 2, 8, 1, 6);
    let store = layer_store(&c, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = rand_input(&mut rng, &[2, 6, 8]);
    let tape = Tape::new();
    let w = Weights::from_vars(&store.bind(&tape, false), 1).unwrap();
    let lw = &w.layers[0];
    let hv = tape.constant(h);
    let got = encoder_layer(hv, lw, 2, None).unwrap().value();

    fn lin<'t>(x: Var<'t, f64>, (w, b): (Var<'t, f64>, Var<'t, f64>)) -> Var<'t, f64> {
        x.matmul(w).unwrap().add_row(b).unwrap()
    }
    fn heads(x: Var<'_, f64>) -> Var<'_, f64> {
        x.reshape(&[2, 6, 2, 4]).unwrap().permute(&[0, 2, 1, 3]).unwrap()
    }
    let (q, k, v) = (heads(lin(hv, lw.query)), heads(lin(hv, lw.key)), heads(lin(hv, lw.value)));
    let a = q.matmul(k.transpose().unwrap()).unwrap().scale(0.5).softmax(3).unwrap();
    let att = lin(a.matmul(v).unwrap().permute(&[0, 2, 1, 3]).unwrap().reshape(&[2, 6, 8]).unwrap(), lw.proj);
    let eps = network::NORM_EPS;
    let h1 = hv.add(att).unwrap().layer_norm(lw.norm1.0, lw.norm1.1, eps).unwrap();
    let f = lin(lin(h1, lw.ffn1).gelu(), lw.ffn2);
    let want = h1.add(f).unwrap().layer_norm(lw.norm2.0, lw.norm2.1, eps).unwrap().value();
    assert_eq!(got, want);
}

fn checkpoint(joints: usize, t_max: usize, seed: u64) -> Checkpoint {
    Checkpoint::new(cfg(2, 2, 16, joints, t_max), seed).unwrap()
}

fn prefilled(seed: u64, frames: usize, joints: usize, mask: &CompletionMask) -> MotionSequence {
    crate::interp::fill_unknown(&synth_motion(seed, frames, joints), mask).unwrap()
}

#[test]
fn forward_is_deterministic_and_counted() {
    let ck = checkpoint(3, 8, 7);
    let m = labels("KKUUUKII");
    let seq = prefilled(7, 8, 3, &m);
    let a = ck.forward(&seq, &m).unwrap();
    let b = ck.forward(&seq, &m).unwrap();
    assert_eq!(a, b);
    assert_eq!(ck.forward_passes(), 2);
    assert_eq!(a.len(), 8);
    assert_eq!(a.num_joints(), 3);
    assert!(a.frames.iter().flat_map(|f| &f.rotations).all(|q| (q.norm() - 1.0).abs() < 1e-9));

    let seqs = vec![seq.clone(); 4];
    let masks = vec![m.clone(); 4];
    let out = ck.forward_batch(&seqs, &masks).unwrap();
    assert_eq!(ck.forward_passes(), 3);
    for o in &out {
        assert!(o.frames.iter().zip(&a.frames).all(|(x, y)| x
            .positions
            .iter()
            .zip(&y.positions)
            .all(|(p, q)| { (0..3).all(|k| (p[k] - q[k]).abs() < 1e-5) })));
    }
}

#[test]
fn ignored_content_is_invisible() {
    let ck = checkpoint(3, 8, 8);
    let m = labels("KUUKIIII");
    let seq = prefilled(8, 8, 3, &m);
    let mut noisy = seq.clone();
    for f in &mut noisy.frames[4..] {
        f.positions[0] = [9.0, -3.0, 4.0];
        f.rotations[1] = Quat::from_axis_angle([0.0, 1.0, 0.0], 1.3);
    }
    let (a, b) = (ck.forward(&seq, &m).unwrap(), ck.forward(&noisy, &m).unwrap());
    for t in 0..4 {
        assert_eq!(a.frames[t], b.frames[t]);
    }
}

#[test]
fn label_change_changes_output() {
    let ck = checkpoint(3, 8, 9);
    let m1 = labels("KKKKUUKI");
    let m2 = labels("KKKUUUKI");
    let seq = prefilled(9, 8, 3, &m1);
    assert_ne!(ck.forward(&seq, &m1).unwrap(), ck.forward(&seq, &m2).unwrap());
}

#[test]
fn attention_rows_sum_to_one() {
    let ck = checkpoint(3, 8, 10);
    let m = labels("KUUUUUUK");
    let (_, maps) = ck.forward_probed(&prefilled(10, 8, 3, &m), &m).unwrap();
    assert_eq!(maps.len(), 2);
    for a in &maps {
        assert_eq!(a.shape(), &[1, 2, 8, 8]);
        for r in a.data().chunks_exact(8) {
            assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn rejects_mismatched_inputs() {
    let ck = checkpoint(3, 8, 11);
    let m = labels("KUUUUUUK");
    assert!(matches!(ck.forward(&synth_motion(0, 8, 4), &m), Err(Error::DimensionMismatch(_))));
    assert!(matches!(ck.forward(&synth_motion(0, 7, 3), &m), Err(Error::MaskLengthMismatch { .. })));
    let long = labels("KUUUUUUUUK");
    assert!(matches!(ck.forward(&synth_motion(0, 10, 3), &long), Err(Error::DimensionMismatch(_))));
}

#[test]
fn every_parameter_receives_gradient() {
    let c = tiny();
    let store = ParamStore::<f32>::init(&c, 12).unwrap();
    let m = labels("KKUUUKII");
    let stats = NormStats::identity(3);
    let seq = prefilled(12, 8, 3, &m);
    let x = encode::<f32>(&seq, Some(&m), &c, &stats).unwrap();
    let target = encode::<f32>(&synth_motion(13, 8, 3), None, &c, &stats).unwrap();
    let tape = Tape::new();
    let vars = store.bind(&tape, true);
    let w = Weights::from_vars(&vars, c.layers).unwrap();
    let xv = tape.constant(Tensor::new(vec![1, 8, c.input_dim()], x).unwrap());
    let y = network(xv, &[&m], &w, &c, None).unwrap();
    let tv = tape.constant(Tensor::new(vec![1, 8, c.input_dim()], target).unwrap());
    let loss = y.sub(tv).unwrap().abs().mean();
    let grads = tape.backward(loss).unwrap();
    for (name, v) in store.names().iter().zip(&vars) {
        let g = grads.get(*v).unwrap_or_else(|| panic!("no gradient for {name}"));
        assert!(g.sum_sq() > 0.0, "zero gradient for {name}");
    }
}

#[test]
fn composed_model_gradients_match_finite_differences() {
    let c = tiny();
    let store = ParamStore::<f64>::init(&c, 14).unwrap();
    let m = labels("KKUUUKUK");
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut inputs = store.tensors().to_vec();
    inputs.push(rand_input(&mut rng, &[1, 8, c.input_dim()]));
    let n = store.len();
    let res = check(&inputs, 1e-5, |tape, vars| {
        let w = Weights::from_vars(&vars[..n], c.layers)?;
        let y = network(vars[n], &[&m], &w, &c, None)?;
        let probe = tape.constant(Tensor::from_fn(&y.shape(), |i| ((i as f64) * 0.31).sin()));
        Ok(y.mul(probe)?.sum())
    })
    .unwrap();
    assert!(res.max_rel_error() < 1e-4, "{:?}", res.rel_errors);
}

#[test]
fn encode_decode_round_trip() {
    let c = ModelConfig { coord: Coord::Local, ..cfg(1, 1, 4, 5, 20) };
    let seq = synth_motion(15, 20, 5);
    let stats = crate::io::compute_norm_stats(std::slice::from_ref(&seq)).unwrap();
    let x = encode::<f64>(&seq, None, &c, &stats).unwrap();
    let back = decode(&x, &seq, &c, &stats).unwrap();
    for (a, b) in back.frames.iter().zip(&seq.frames) {
        for j in 0..5 {
            assert!((0..3).all(|k| (a.positions[j][k] - b.positions[j][k]).abs() < 1e-9));
            assert!((a.rotations[j].dot(b.rotations[j]) - 1.0).abs() < 1e-9);
        }
    }
    let m = labels("KUIIIIIIIIIIIIIIIIII");
    let x = encode::<f64>(&seq, Some(&m), &c, &stats).unwrap();
    assert!(x[2 * c.input_dim()..].iter().all(|&v| v == 0.0));
}

#[test]
fn checkpoint_bytes_round_trip() {
    let mut ck = checkpoint(3, 8, 16);
    ck.norm_stats = Some(NormStats::identity(3));
    ck.skeleton = Some(crate::io::synth_skeleton(3));
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    let m = labels("KUUUUUUK");
    let seq = prefilled(16, 8, 3, &m);
    assert_eq!(back.forward(&seq, &m).unwrap(), ck.forward(&seq, &m).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
}
