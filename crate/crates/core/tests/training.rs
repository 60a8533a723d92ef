use moil::downstream::{train_classifier, ClassifierConfig};
use moil::model::{pretrain, Checkpoint, EncoderConfig, MoilNet, OutputActivation, PretrainConfig};
use moil::motif::SimilarityTarget;
use moil::nn::{mse_loss, Adam, Layer, Mode, Tensor};
use moil::data::Period;

fn tiny(act: OutputActivation) -> EncoderConfig {
    EncoderConfig {
        conv_blocks: 2,
        conv_channels: 6,
        kernel: 3,
        lstm_blocks: 1,
        lstm_units: 5,
        output_activation: act,
    }
}

fn wave_period(key: &str, len: usize, phase: f64, labels: Option<Vec<u32>>) -> Period {
    let values = (0..len * 2)
        .map(|i| 0.5 + 0.4 * ((i / 2) as f64 * 0.21 + phase + (i % 2) as f64).sin())
        .collect();
    Period::new("w0", key, 2, values, 30.0, labels).unwrap()
}

fn target_for(p: &Period, n: usize, f: impl Fn(usize, usize) -> f64) -> SimilarityTarget {
    let values = (0..p.len()).flat_map(|t| (0..n).map(move |k| (t, k))).map(|(t, k)| f(t, k)).collect();
    SimilarityTarget {
        period_key: p.key(),
        n_channels: n,
        values,
    }
}

fn zero_final_linear(net: &mut MoilNet) {
    let last = net
        .projector
        .layers
        .iter_mut()
        .rev()
        .find_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            _ => None,
        })
        .unwrap();
    last.weight.value.iter_mut().for_each(|w| *w = 0.0);
    last.bias.value.iter_mut().for_each(|b| *b = 0.0);
}

#[test]
fn projector_output_is_nonnegative() {
    let mut net = MoilNet::new(tiny(OutputActivation::Relu), 2, 4, 3).unwrap();
    let x = Tensor::new(vec![3, 25, 2], (0..150).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
    let y = net.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.shape(), &[3, 25, 4]);
    assert!(y.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn zeroed_final_linear_gives_zero_output_and_zero_loss() {
    let mut net = MoilNet::new(tiny(OutputActivation::Relu), 2, 3, 5).unwrap();
    zero_final_linear(&mut net);
    let x = Tensor::new(vec![2, 30, 2], (0..120).map(|i| (i as f64).sin()).collect()).unwrap();
    let y = net.forward(&x, Mode::Train).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    let loss = mse_loss(&y, &Tensor::zeros(vec![2, 30, 3])).unwrap();
    assert_eq!(loss.value, 0.0);

    let p = wave_period("p0", 90, 0.0, None);
    let t = target_for(&p, 3, |_, _| 0.0);
    let cfg = PretrainConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        batch_size: 4,
        epochs: 1,
        window: 30,
        step: 30,
        stop_below: None,
    };
    let out = pretrain(net, &[p], &[t], &cfg, 0).unwrap();
    assert_eq!(out.losses, vec![0.0]);
}

fn small_run(seed: u64) -> (Vec<f64>, MoilNet) {
    let periods: Vec<Period> = (0..3).map(|i| wave_period(&format!("p{i}"), 120, i as f64, None)).collect();
    let targets: Vec<SimilarityTarget> = periods
        .iter()
        .map(|p| target_for(p, 2, |t, k| 0.5 + 0.3 * ((t as f64) * 0.1 + k as f64).sin()))
        .collect();
    let cfg = PretrainConfig {
        lr: 3e-3,
        weight_decay: 1e-4,
        batch_size: 3,
        epochs: 4,
        window: 40,
        step: 20,
        stop_below: None,
    };
    let net = MoilNet::new(tiny(OutputActivation::Sigmoid), 2, 2, seed).unwrap();
    let out = pretrain(net, &periods, &targets, &cfg, seed).unwrap();
    (out.losses, out.last)
}

#[test]
fn same_seed_gives_identical_loss_curves() {
    let (a, na) = small_run(11);
    let (b, nb) = small_run(11);
    assert_eq!(a, b);
    assert_eq!(na.encoder.state_hash(), nb.encoder.state_hash());
    let (c, _) = small_run(12);
    assert_ne!(a, c);
}

#[test]
fn checkpoint_reload_forward_is_bitwise_identical() {
    let (_, net) = small_run(2);
    let ck = Checkpoint::new(net, Adam::new(1e-3, 0.0), 4, 0.1, 2, "cfg", "motifs");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let x = Tensor::new(vec![2, 40, 2], (0..160).map(|i| ((i * 13) % 17) as f64 / 17.0).collect()).unwrap();
    let y0 = ck.net.infer(&x).unwrap();
    let y1 = back.net.infer(&x).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&y0), bits(&y1));
}

fn two_window_setup() -> (MoilNet, Vec<Period>) {
    let mut net = MoilNet::new(tiny(OutputActivation::Relu), 2, 2, 4).unwrap();
    let p0 = wave_period("a", 40, 0.0, Some([vec![0; 20], vec![1; 20]].concat()));
    let p1 = wave_period("b", 40, 2.0, Some([vec![1; 10], vec![0; 30]].concat()));
    let x = Tensor::new(vec![2, 40, 2], [p0.values(), p1.values()].concat()).unwrap();
    net.forward(&x, Mode::Train).unwrap();
    (net, vec![p0, p1])
}

fn capacity_cfg() -> ClassifierConfig {
    ClassifierConfig {
        hidden: vec![32, 16],
        classes: Some(2),
        lr: 1e-2,
        weight_decay: 0.0,
        epochs: 300,
        batch_size: 2,
        window: 40,
        step: 40,
    }
}

#[test]
fn classifier_fits_two_windows() {
    let (net, periods) = two_window_setup();
    let refs: Vec<&Period> = periods.iter().collect();
    let before = net.encoder.state_hash();
    let trained = train_classifier(&net.encoder, &refs, 2, &capacity_cfg(), 0, |_, _| Ok(())).unwrap();
    assert_eq!(net.encoder.state_hash(), before);
    let last = *trained.losses.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
}

#[test]
fn classifier_training_is_deterministic() {
    let (net, periods) = two_window_setup();
    let refs: Vec<&Period> = periods.iter().collect();
    let mut cfg = capacity_cfg();
    cfg.epochs = 5;
    let a = train_classifier(&net.encoder, &refs, 2, &cfg, 9, |_, _| Ok(())).unwrap();
    let b = train_classifier(&net.encoder, &refs, 2, &cfg, 9, |_, _| Ok(())).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.classifier.net.state_hash(), b.classifier.net.state_hash());
}

#[test]
fn label_outside_class_range_is_rejected() {
    let (net, mut periods) = two_window_setup();
    periods[0] = wave_period("a", 40, 0.0, Some(vec![2; 40]));
    let refs: Vec<&Period> = periods.iter().collect();
    assert!(train_classifier(&net.encoder, &refs, 2, &capacity_cfg(), 0, |_, _| Ok(())).is_err());
}
