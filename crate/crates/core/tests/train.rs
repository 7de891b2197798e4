use corrnet_core::autograd::{Graph, ParamStore};
use corrnet_core::data::synth_dataset;
use corrnet_core::model::{CorrNet, CorrNetConfig};
use corrnet_core::tensor::ops::NormMode;
use corrnet_core::train::{batch, total_loss, toy_data, train_step, train_toy, Adam, TrainConfig};
use corrnet_core::{Error, Tensor};

fn small() -> CorrNetConfig {
    CorrNetConfig {
        input_size: 32,
        ..CorrNetConfig::default()
    }
}

fn quick(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        lr,
        epochs,
        input_size: 32,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn deep_supervision_loss_of_constant_maps_has_a_closed_form() {
    let store = ParamStore::<f64>::new();
    let (h, w) = (16, 16);
    // top 5 rows salient
    let gt = Tensor::from_fn(&[1, 1, h, w], |i| if i / w < 5 { 1.0 } else { 0.0 });
    let ones = 5.0 * w as f64;
    let n = (h * w) as f64;
    let f = ones / n;
    let ps = [0.9, 0.6, 0.3, 0.05];
    let sizes = [16, 8, 4, 2];

    let mut g = Graph::new(&store, NormMode::Eval);
    let maps: Vec<_> = ps
        .iter()
        .zip(sizes)
        .map(|(&p, s)| g.input(Tensor::full(&[1, 1, s, s], p)))
        .collect();
    let loss = total_loss(&mut g, &maps, &gt).unwrap();
    let want: f64 = ps
        .iter()
        .map(|&p| {
            let bce = -(f * p.ln() + (1.0 - f) * (1.0 - p).ln());
            let inter = p * ones;
            let iou = 1.0 - (inter + 1.0) / (p * n + ones - inter + 1.0);
            bce + iou
        })
        .sum();
    assert!((g.value(loss).item().unwrap() - want).abs() < 1e-12);
}

#[test]
fn perfect_binary_prediction_is_near_zero_loss() {
    let store = ParamStore::<f64>::new();
    let gt = Tensor::from_fn(&[2, 1, 8, 8], |i| ((i / 8 + i) % 3 == 0) as u8 as f64);
    let mut g = Graph::new(&store, NormMode::Eval);
    let s = g.input(gt.clone());
    let loss = total_loss(&mut g, &[s], &gt).unwrap();
    // only the clamp at 1e-7 keeps the BCE term away from exactly zero
    assert!(g.value(loss).item().unwrap() < 2e-7);
    assert!(total_loss(&mut g, &[], &gt).is_err());
}

#[test]
fn zero_learning_rate_leaves_every_parameter_bit_identical() {
    let (train, hold) = toy_data(20, 4, 32, 1).unwrap();
    let mut model = CorrNet::new(&small(), 2).unwrap();
    let before = model.store.cast::<f32>();
    let history = train_toy(&mut model, &train, &hold, &quick(1, 0.0), |_| {}).unwrap();
    assert_eq!(history.epochs.len(), 1);
    for (a, b) in before.params().iter().zip(model.store.params()) {
        assert!(
            a.value
                .data()
                .iter()
                .zip(b.value.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            "{}",
            a.name
        );
    }
    // batch statistics still flow into the running buffers
    let moved = before
        .buffers()
        .iter()
        .zip(model.store.buffers())
        .filter(|(a, b)| a.value.data() != b.value.data())
        .count();
    assert!(moved > 0);
}

#[test]
fn history_has_one_record_per_epoch_with_the_scheduled_rate() {
    let (train, hold) = toy_data(20, 4, 32, 1).unwrap();
    let mut model = CorrNet::new(&small(), 2).unwrap();
    let cfg = TrainConfig {
        lr_drop_epoch: 1,
        ..quick(2, 1e-4)
    };
    let mut seen = Vec::new();
    let history = train_toy(&mut model, &train, &hold, &cfg, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2]);
    assert_eq!(
        history.epochs.iter().map(|e| e.lr).collect::<Vec<_>>(),
        vec![1e-4, 1e-5]
    );
    for e in &history.epochs {
        assert!(e.loss.is_finite() && e.loss > 0.0);
        assert!(e.mae.iter().all(|m| (0.0..=1.0).contains(m)));
    }
    let mut csv = Vec::new();
    history.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
}

#[test]
fn repeated_steps_on_one_batch_reduce_its_loss() {
    let data = synth_dataset(2, 32, 9).unwrap();
    let (x, gt) = batch(&data).unwrap();
    let mut model = CorrNet::new(&small(), 0).unwrap();
    let mut opt = Adam::new(&model.store);
    let losses: Vec<f64> = (0..8)
        .map(|_| train_step(&mut model, &mut opt, &x, &gt, 1e-3).unwrap())
        .collect();
    assert!(losses[7] < 0.9 * losses[0], "{losses:?}");
}

#[test]
fn bad_training_setups_are_rejected() {
    let (train, hold) = toy_data(20, 4, 32, 1).unwrap();
    let mut model = CorrNet::new(&small(), 2).unwrap();
    assert!(matches!(
        train_toy(&mut model, &train[..5], &hold, &quick(1, 1e-4), |_| {}),
        Err(Error::Dataset(_))
    ));
    assert!(train_toy(&mut model, &train, &[], &quick(1, 1e-4), |_| {}).is_err());
    assert!(train_toy(&mut model, &train, &hold, &quick(1, -1.0), |_| {}).is_err());
    let zero_batch = TrainConfig {
        batch_size: 0,
        ..quick(1, 1e-4)
    };
    assert!(train_toy(&mut model, &train, &hold, &zero_batch, |_| {}).is_err());
}
