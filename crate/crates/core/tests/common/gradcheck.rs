//! Central finite-difference checks of analytic gradients.

use persiland::landscape::{landscape_backward, sample_landscape, LandscapeSpec};
use persiland::network::{
    bce_loss, conv1d_forward, persistence_backward, persistence_forward, Activation, ConvLayerSpec, ConvParams,
    FeatureMap, Network, NetworkSpec, PersistenceLayerSpec, Variant,
};
use persiland::topology::{compute_pairs, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
const MARGIN: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// True when no perturbation of size `MARGIN` can change which pair or which
/// tent piece any grid sample comes from. Exact zeros are allowed to repeat.
pub fn generic_segment(seg: &[f64], spec: &LandscapeSpec) -> bool {
    let mut vals: Vec<f64> = seg.iter().copied().filter(|&v| v != 0.0).collect();
    vals.sort_by(f64::total_cmp);
    if vals.windows(2).any(|w| w[1] - w[0] < MARGIN) {
        return false;
    }
    let pairs = compute_pairs(&Signal::new(seg.to_vec()).unwrap()).pairs;
    for x in spec.grid() {
        let mut tents = Vec::new();
        for p in &pairs {
            let mid = 0.5 * (p.birth + p.death);
            if [p.death, mid, p.birth].iter().any(|&e| (x - e).abs() < MARGIN) {
                return false;
            }
            let t = (x - p.death).min(p.birth - x);
            if t > 0.0 {
                tents.push(t);
            }
        }
        tents.sort_by(f64::total_cmp);
        if tents.windows(2).any(|w| w[1] - w[0] < MARGIN) {
            return false;
        }
    }
    true
}

pub fn generic_map(x: &FeatureMap, p: &PersistenceLayerSpec) -> bool {
    (0..x.channels()).all(|c| {
        x.channel(c)
            .chunks_exact(p.segment_length)
            .all(|seg| generic_segment(seg, &p.landscape))
    })
}

pub fn random_map(rng: &mut ChaCha8Rng, channels: usize, len: usize) -> FeatureMap {
    let data = (0..channels * len).map(|_| rng.random_range(-1.0..2.0)).collect();
    FeatureMap::new(channels, len, data).unwrap()
}

/// Largest relative error of `landscape_backward` over `cases` generic signals.
pub fn landscape_max_error(seed: u64, cases: usize) -> f64 {
    let spec = LandscapeSpec::new(-0.5, 2.0, 3, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < cases {
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..2.0)).collect();
        if !generic_segment(&x, &spec) {
            continue;
        }
        let up: Vec<f64> = (0..spec.block_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = |s: &[f64]| -> f64 {
            let m = sample_landscape(&compute_pairs(&Signal::new(s.to_vec()).unwrap()), &spec);
            m.values.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let m = sample_landscape(&compute_pairs(&Signal::new(x.clone()).unwrap()), &spec);
        let g = landscape_backward(&m, &up, x.len()).unwrap();
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += H;
            let mut n = x.clone();
            n[i] -= H;
            worst = worst.max(rel_err(g[i], (obj(&p) - obj(&n)) / (2.0 * H)));
        }
        checked += 1;
    }
    worst
}

/// Largest relative error of `persistence_backward` on 3-channel inputs
/// with two whole segments and a dropped remainder.
pub fn persistence_layer_max_error(seed: u64, cases: usize) -> f64 {
    let spec = PersistenceLayerSpec {
        landscape: LandscapeSpec::new(-0.5, 2.0, 3, 6).unwrap(),
        segment_length: 16,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < cases {
        let x = random_map(&mut rng, 3, 37);
        if !generic_map(&x, &spec) {
            continue;
        }
        let (out, cache) = persistence_forward(&x, &spec).unwrap();
        let up = random_map(&mut rng, out.channels(), out.len());
        let obj = |m: &FeatureMap| -> f64 {
            let (o, _) = persistence_forward(m, &spec).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let g = persistence_backward(&cache, &up).unwrap();
        for i in 0..x.data().len() {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut n = x.clone();
            n.data_mut()[i] -= H;
            worst = worst.max(rel_err(g.data()[i], (obj(&p) - obj(&n)) / (2.0 * H)));
        }
        checked += 1;
    }
    worst
}

/// Two early filters (L=4, S=2), T=8, P=2, Q=4, two middle filters, one
/// late layer, two tags.
pub fn tiny_pcnn() -> NetworkSpec {
    NetworkSpec {
        input_channels: 2,
        early: vec![ConvLayerSpec::new(2, 4, 2)],
        variant: Variant::Pcnn,
        middle: Some(ConvLayerSpec::new(2, 1, 8)),
        persistence: Some(PersistenceLayerSpec {
            landscape: LandscapeSpec::new(-0.5, 1.5, 2, 4).unwrap(),
            segment_length: 8,
        }),
        late: vec![ConvLayerSpec::pointwise(2)],
        num_tags: 2,
        activation: Activation::Relu,
    }
}

/// Largest relative errors `(parameters, inputs)` of the full network
/// gradient of the BCE loss over `cases` generic networks and inputs.
pub fn tiny_pcnn_max_errors(seed: u64, cases: usize) -> (f64, f64) {
    let spec = tiny_pcnn();
    let pers = spec.persistence.unwrap();
    let labels = [1.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_p, mut worst_x) = (0.0f64, 0.0f64);
    let mut checked = 0;
    let mut attempt = 0u64;
    while checked < cases {
        attempt += 1;
        let mut net = Network::initialize(spec.clone(), seed.wrapping_add(attempt)).unwrap();
        for layer in net.params_mut().layers.iter_mut() {
            for b in layer.biases.iter_mut() {
                *b = rng.random_range(0.1..0.4);
            }
        }
        // Early output: floor((35 - 4 + 1) / 2) = 16 steps, two segments of 8.
        let x = random_map(&mut rng, 2, 35);
        if !generic_map(&early_output(&net, &x), &pers) || kink_nearby(&net, &x) {
            continue;
        }
        let trace = net.forward(&x, None).unwrap();
        let loss = |n: &Network, m: &FeatureMap| bce_loss(&n.predict(m).unwrap(), &labels).0;
        let (_, g) = bce_loss(&trace.scores, &labels);
        let (gp, gx) = net.backward(&trace, &g).unwrap();

        for (i, &a) in gp.iter().enumerate() {
            let mut p = net.clone();
            *p.params_mut().iter_mut().nth(i).unwrap() += H;
            let mut n = net.clone();
            *n.params_mut().iter_mut().nth(i).unwrap() -= H;
            worst_p = worst_p.max(rel_err(a, (loss(&p, &x) - loss(&n, &x)) / (2.0 * H)));
        }
        for i in 0..x.data().len() {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut n = x.clone();
            n.data_mut()[i] -= H;
            worst_x = worst_x.max(rel_err(gx.data()[i], (loss(&net, &p) - loss(&net, &n)) / (2.0 * H)));
        }
        checked += 1;
    }
    (worst_p, worst_x)
}

/// Output of the early layer, i.e. the persistence layer's input.
fn early_output(net: &Network, x: &FeatureMap) -> FeatureMap {
    let spec = net.spec();
    conv1d_forward(x, &spec.early[0], &net.params().layers[0], spec.activation).unwrap().0
}

/// Whether any ReLU pre-activation or max-pool comparison in the early or
/// middle layer sits within `MARGIN` of a switch point.
fn kink_nearby(net: &Network, x: &FeatureMap) -> bool {
    let spec = net.spec();
    let early = early_output(net, x);
    layer_has_kink(x, &spec.early[0], &net.params().layers[0])
        || layer_has_kink(&early, &spec.middle.unwrap(), &net.params().layers[1])
}

fn layer_has_kink(x: &FeatureMap, l: &ConvLayerSpec, params: &ConvParams) -> bool {
    let lin = conv1d_forward(x, &ConvLayerSpec::new(l.num_filters, l.filter_length, 1), params, Activation::Linear)
        .unwrap()
        .0;
    for k in 0..lin.channels() {
        let ch = lin.channel(k);
        if ch.iter().any(|v| v.abs() < MARGIN) {
            return true;
        }
        for w in ch.chunks_exact(l.pool_size) {
            let mut s: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n > 1 && s[n - 1] > 0.0 && s[n - 1] - s[n - 2] < MARGIN {
                return true;
            }
        }
    }
    false
}
