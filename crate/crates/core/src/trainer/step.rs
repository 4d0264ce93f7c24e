use srunet_tensor::{Scalar, Tensor, Var};

use super::{ema_update, lr_schedule, sync_buffers, ModelState, TrainConfig};
use crate::dataio::{apply_plan, mask_batch, rgb_batch, AugmentMode, AugmentPlan, Sample};
use crate::error::{Error, Result};
use crate::network::{Ctx, Srunet};
use crate::objectives::{combine, downsample_nearest, loss_reco, loss_sup, loss_unsup, pseudo_label, sample_reco, LossBundle};
use crate::seed;

fn batch_inputs<T: Scalar>(samples: &[Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let maps: Vec<_> = samples.iter().map(|s| &s.map).collect();
    Ok((rgb_batch(&images)?, rgb_batch(&maps)?))
}

fn concat<T: Scalar>(a: Tensor<T>, b: Option<Tensor<T>>) -> Result<Tensor<T>> {
    match b {
        None => Ok(a),
        Some(b) => Ok(Var::concat_batch(&[&Var::constant(a), &Var::constant(b)])?.value().clone()),
    }
}

/// One optimizer step.
///
/// 1. The teacher predicts the raw unlabeled tiles; pseudo-labels and the
///    confidence mask come from these predictions.
/// 2. Unlabeled tiles get a strong augmentation whose flips are also
///    applied to their pseudo-labels and mask; labeled tiles get flips.
/// 3. The student runs on the concatenated batch.
/// 4. Losses, a student gradient step, running-statistics update, then the
///    EMA teacher update with running statistics copied over.
pub fn train_step<T: Scalar>(
    net: &Srunet,
    state: &mut ModelState<T>,
    labeled: &[Sample],
    unlabeled: &[Sample],
    cfg: &TrainConfig,
    total_steps: u64,
) -> Result<LossBundle> {
    if labeled.is_empty() {
        return Err(Error::invalid("a training step needs at least one labeled tile"));
    }
    let step_seed = seed::derive(&[cfg.seed, state.step]);
    let nl = labeled.len();

    let pseudo = if unlabeled.is_empty() {
        None
    } else {
        let (img, map) = batch_inputs::<T>(unlabeled)?;
        let prob = net.predict(&state.teacher, &img, &map)?;
        Some(pseudo_label(&prob, cfg.confidence_threshold))
    };

    let weak: Vec<Sample> = labeled
        .iter()
        .enumerate()
        .map(|(i, s)| apply_plan(s, &AugmentPlan::sample(AugmentMode::Weak, seed::derive(&[step_seed, 0, i as u64]))))
        .collect();
    let label_refs = weak
        .iter()
        .map(|s| s.label.as_ref().ok_or_else(|| Error::invalid(format!("{} has no label", s.tile_id))))
        .collect::<Result<Vec<_>>>()?;
    let labels_l = mask_batch::<T>(&label_refs)?;

    let mut strong = Vec::with_capacity(unlabeled.len());
    let mut unsup_targets = None;
    if let Some((mut y, mut mask)) = pseudo {
        let (h, w) = (unlabeled[0].height(), unlabeled[0].width());
        for (i, s) in unlabeled.iter().enumerate() {
            let plan = AugmentPlan::sample(AugmentMode::Strong, seed::derive(&[step_seed, 1, i as u64]));
            strong.push(apply_plan(s, &plan));
            plan.flip_plane(&mut y.data_mut()[i * h * w..(i + 1) * h * w], h, w);
            plan.flip_plane(&mut mask.weights.data_mut()[i * h * w..(i + 1) * h * w], h, w);
        }
        unsup_targets = Some((y, mask));
    }

    let (img_l, map_l) = batch_inputs::<T>(&weak)?;
    let (img, map) = if strong.is_empty() {
        (img_l, map_l)
    } else {
        let (img_u, map_u) = batch_inputs::<T>(&strong)?;
        (concat(img_l, Some(img_u))?, concat(map_l, Some(map_u))?)
    };

    let ctx = Ctx::train(&state.student);
    let out = net.forward(&ctx, &Var::constant(img), &Var::constant(map))?;
    let prob = out.road_prob()?;
    let n = prob.shape()[0];
    let sup = loss_sup(&prob.narrow_batch(0, nl)?, &labels_l)?;
    let unsup = match &unsup_targets {
        Some((y, mask)) => loss_unsup(&prob.narrow_batch(nl, n - nl)?, y, mask)?,
        None => Var::constant(Tensor::scalar(T::zero())),
    };

    let all_labels = concat(labels_l, unsup_targets.as_ref().map(|(y, _)| y.clone()))?;
    let keep = if cfg.reco_pool_unlabeled { n } else { nl };
    let rep = out.representation.narrow_batch(0, keep)?;
    let (rh, rw) = (rep.shape()[2], rep.shape()[3]);
    let coarse_prob = Var::constant(out.refined_logits.value().clone())
        .softmax_channels()?
        .narrow_channels(1, 1)?
        .narrow_batch(0, keep)?;
    let coarse_prob = if coarse_prob.shape()[2..] == [rh, rw] {
        coarse_prob
    } else {
        coarse_prob.resize_bilinear(rh, rw)?
    };
    let rep_labels = downsample_nearest(&Var::constant(all_labels).narrow_batch(0, keep)?.value().clone(), rh, rw)?;
    let sample = sample_reco(rep.value(), coarse_prob.value(), &rep_labels, &cfg.reco, seed::derive(&[step_seed, 2]))?;
    let ctr = loss_reco(&rep, &sample, &cfg.reco)?;

    let scalar = |v: &Var<T>| v.value().data()[0].to_f64_lossy();
    let bundle = combine(scalar(&sup), scalar(&unsup), scalar(&ctr), cfg.weights)?;
    // Zero-weighted terms stay out of the graph so their parameters are
    // left alone, weight decay included.
    let mut total = sup;
    for (term, alpha) in [(&unsup, cfg.weights.alpha_unsup), (&ctr, cfg.weights.alpha_ctr)] {
        if alpha != 0.0 {
            total = total.add(&term.scale(T::lit(alpha)))?;
        }
    }
    let grads = ctx.param_grads(&total.backward());
    let bn = ctx.take_bn_updates();
    drop(ctx);

    let lr = lr_schedule(state.step, total_steps, cfg)?;
    state.optimizer.step(&mut state.student, &grads, lr)?;
    state.student.apply_bn_updates(&bn, T::lit(cfg.bn_momentum));
    ema_update(&mut state.teacher, &state.student, cfg.ema_decay)?;
    sync_buffers(&mut state.teacher, &state.student)?;
    state.step += 1;
    Ok(bundle)
}
