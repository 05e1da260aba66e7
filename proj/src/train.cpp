#include "rdcr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rdcr/ops.hpp"
#include "rdcr/rotation.hpp"

namespace rdcr::train {
namespace {

constexpr int kEvalBatch = 256;

bool schedule_ever_nonzero(const Schedule& s) {
  return s.start_value != 0.0 || s.end_value != 0.0;
}

std::vector<Tensor> trainable(nn::NetworkParams& p) { return p.parameters(); }

void copy_running_stats(nn::NetworkParams& dst, const nn::NetworkParams& src) {
  for (size_t i = 0; i < dst.backbone.size(); ++i) {
    dst.backbone[i].running_mean = src.backbone[i].running_mean;
    dst.backbone[i].running_var = src.backbone[i].running_var;
  }
}

// translation within +-t (zero fill) then optional horizontal mirror; one
// stream per image so the draws are independent of batch composition.
void geometric_augment(double* dst, const double* src, int c, int g,
                       RngStream& rng, const AugmentOptions& aug) {
  int dx = 0, dy = 0;
  if (aug.translate > 0) {
    dx = static_cast<int>(rng.below(2 * aug.translate + 1)) - aug.translate;
    dy = static_cast<int>(rng.below(2 * aug.translate + 1)) - aug.translate;
  }
  bool flip = aug.hflip && rng.uniform() < 0.5;
  for (int ch = 0; ch < c; ++ch) {
    const double* sp = src + static_cast<ptrdiff_t>(ch) * g * g;
    double* dp = dst + static_cast<ptrdiff_t>(ch) * g * g;
    for (int r = 0; r < g; ++r)
      for (int col = 0; col < g; ++col) {
        int sr = r - dy;
        int sc = (flip ? g - 1 - col : col) - dx;
        dp[r * g + col] =
            (sr >= 0 && sr < g && sc >= 0 && sc < g) ? sp[sr * g + sc] : 0.0;
      }
  }
}

void add_pixel_noise(double* dst, Eigen::Index len, double sigma, RngStream& rng) {
  if (sigma <= 0.0) return;
  for (Eigen::Index i = 0; i < len; ++i) dst[i] += sigma * rng.normal();
}

std::vector<int> shuffled(const std::vector<int>& indices, uint64_t key) {
  std::vector<int> order = indices;
  RngStream rng(key);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

int argmax_row(const double* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr,
              double momentum, double weight_decay) {
  if (state.velocity.size() != params.size())
    state.velocity.assign(params.size(), Eigen::ArrayXd());
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Eigen::ArrayXd& v = state.velocity[i];
    if (v.size() == 0) v = Eigen::ArrayXd::Zero(p.numel());
    if (v.size() != p.numel()) throw ShapeError("sgd_step: parameter size changed");
    v = momentum * v + p.grad() + weight_decay * p.data();
    p.data() -= lr * v;
  }
}

double clip_gradients(std::vector<Tensor>& params, double tau) {
  double sq = 0.0;
  for (Tensor& p : params) sq += (p.grad() * p.grad()).sum();
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
  if (norm > tau && norm > 0.0) {
    double s = tau / norm;
    for (Tensor& p : params) p.grad() *= s;
  }
  return norm;
}

void ema_update(nn::NetworkParams& teacher, const nn::NetworkParams& student,
                double decay) {
  auto& s = const_cast<nn::NetworkParams&>(student);
  std::vector<Tensor> tp = trainable(teacher);
  std::vector<Tensor> sp = trainable(s);
  if (tp.size() != sp.size()) throw ShapeError("ema_update: parameter lists differ");
  for (size_t i = 0; i < tp.size(); ++i)
    tp[i].data() = decay * tp[i].data() + (1.0 - decay) * sp[i].data();
  copy_running_stats(teacher, student);
}

void SwaState::capture(const nn::NetworkParams& snapshot) {
  auto& s = const_cast<nn::NetworkParams&>(snapshot);
  if (captures == 0) {
    params = s.clone();
    params.set_requires_grad(false);
  } else {
    std::vector<Tensor> ap = trainable(params);
    std::vector<Tensor> sp = trainable(s);
    double n = static_cast<double>(captures);
    for (size_t i = 0; i < ap.size(); ++i)
      ap[i].data() = (ap[i].data() * n + sp[i].data()) / (n + 1.0);
    for (size_t i = 0; i < params.backbone.size(); ++i) {
      auto& avg = params.backbone[i];
      const auto& cur = snapshot.backbone[i];
      avg.running_mean = (avg.running_mean * n + cur.running_mean) / (n + 1.0);
      avg.running_var = (avg.running_var * n + cur.running_var) / (n + 1.0);
    }
  }
  ++captures;
}

Tensor rdcr_loss(const nn::ForwardResult& student_out, const Tensor& teacher_probs,
                 const LossBatch& batch, double w_s, double w_c, double w_r,
                 ConsistencyKind kind, LossParts& parts) {
  const int b = static_cast<int>(batch.in_ds.size());
  if (static_cast<int>(batch.observed.size()) != b)
    throw ShapeError("rdcr_loss: observed/in_ds length mismatch");
  const int expect = batch.expanded ? 4 * b : b;
  if (student_out.class_logits.dim(0) != expect)
    throw ShapeError("rdcr_loss: batch has " + std::to_string(expect) +
                     " student rows, logits have " +
                     std::to_string(student_out.class_logits.dim(0)));

  Tensor class_unrot = student_out.class_logits;
  if (batch.expanded) {
    std::vector<int> unrot(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) unrot[static_cast<size_t>(i)] = 4 * i;
    class_unrot = ops::select_rows(student_out.class_logits, unrot);
  }

  parts = LossParts{};
  Tensor total;
  auto add_term = [&](const Tensor& term, double w) {
    Tensor scaled = ops::scale(term, w);
    total = total.defined() ? ops::add(total, scaled) : scaled;
  };

  std::vector<int> sup_rows, sup_labels;
  for (int i = 0; i < b; ++i)
    if (batch.in_ds[static_cast<size_t>(i)]) {
      sup_rows.push_back(i);
      sup_labels.push_back(batch.observed[static_cast<size_t>(i)]);
    }
  if (!sup_rows.empty()) {
    Tensor rows = static_cast<int>(sup_rows.size()) == b
                      ? class_unrot
                      : ops::select_rows(class_unrot, sup_rows);
    Tensor l_sup = ops::cross_entropy(rows, sup_labels);
    parts.sup = l_sup.value();
    add_term(l_sup, w_s);
  }

  if (teacher_probs.defined()) {
    Tensor l_cons = kind == ConsistencyKind::mse
                        ? ops::mse_consistency(class_unrot, teacher_probs)
                        : ops::kl_consistency(class_unrot, teacher_probs);
    parts.cons = l_cons.value();
    add_term(l_cons, w_c);
  }

  if (!batch.rot_labels.empty()) {
    if (student_out.rot_logits.dim(0) !=
        static_cast<int>(batch.rot_labels.size()))
      throw ShapeError("rdcr_loss: rotation label count mismatch");
    Tensor l_rot = ops::cross_entropy(student_out.rot_logits, batch.rot_labels);
    parts.rot = l_rot.value();
    add_term(l_rot, w_r);
  }

  if (!total.defined()) total = Tensor::zeros({1});
  parts.total = total.value();
  if (!std::isfinite(parts.total))
    throw DivergenceError("non-finite training loss");
  return total;
}

std::vector<int> predict_rows(nn::NetworkParams& params,
                              const std::function<const double*(int)>& image,
                              int count, int batch) {
  const int c = params.config.in_channels;
  const int g = params.config.image_size;
  const Eigen::Index rl = static_cast<Eigen::Index>(c) * g * g;
  const int k = params.config.num_classes;
  std::vector<int> pred(static_cast<size_t>(count));
  nn::ForwardOptions opts;
  opts.train = false;
  for (int start = 0; start < count; start += batch) {
    const int rows = std::min(batch, count - start);
    Tensor x = Tensor::zeros({rows, c, g, g});
    for (int r = 0; r < rows; ++r)
      std::memcpy(x.ptr() + r * rl, image(start + r),
                  static_cast<size_t>(rl) * sizeof(double));
    nn::ForwardResult out = nn::forward(params, x, opts);
    for (int r = 0; r < rows; ++r)
      pred[static_cast<size_t>(start + r)] =
          argmax_row(out.class_logits.ptr() + static_cast<Eigen::Index>(r) * k, k);
  }
  return pred;
}

double evaluate(nn::NetworkParams& params, const Dataset& data, int batch) {
  std::vector<int> pred = predict_rows(
      params, [&](int n) { return data.image(n); }, data.count(), batch);
  return metrics::accuracy(pred, data.labels);
}

PseudoLabels pseudo_labels(nn::NetworkParams& model, const noise::NoisyDataset& data,
                           const std::vector<int>& indices, int batch) {
  const int c = model.config.in_channels;
  const int g = model.config.image_size;
  const Eigen::Index rl = static_cast<Eigen::Index>(c) * g * g;
  const int k = model.config.num_classes;
  const int count = static_cast<int>(indices.size());
  PseudoLabels out;
  out.labels.resize(static_cast<size_t>(count));
  out.probs.resize(static_cast<Eigen::Index>(count) * k);
  nn::ForwardOptions opts;
  opts.train = false;
  for (int start = 0; start < count; start += batch) {
    const int rows = std::min(batch, count - start);
    Tensor x = Tensor::zeros({rows, c, g, g});
    for (int r = 0; r < rows; ++r)
      std::memcpy(x.ptr() + r * rl, data.image(indices[static_cast<size_t>(start + r)]),
                  static_cast<size_t>(rl) * sizeof(double));
    nn::ForwardResult res = nn::forward(model, x, opts);
    Eigen::ArrayXd probs = ops::softmax_rows(res.class_logits.data(), rows, k);
    for (int r = 0; r < rows; ++r) {
      out.labels[static_cast<size_t>(start + r)] =
          argmax_row(probs.data() + static_cast<Eigen::Index>(r) * k, k);
      std::memcpy(out.probs.data() + static_cast<Eigen::Index>(start + r) * k,
                  probs.data() + static_cast<Eigen::Index>(r) * k,
                  static_cast<size_t>(k) * sizeof(double));
    }
  }
  return out;
}

// What the run hands over: the SWA average once a cycle completes, else the
// teacher when one is trained, else the bare student.
metrics::Role evaluated_role(const TrainConfig& cfg) {
  if (cfg.swa.cycles > 0 &&
      cfg.epochs >= cfg.optim.pretrain_epochs + cfg.swa.cycle_epochs)
    return metrics::Role::swa;
  return schedule_ever_nonzero(cfg.weights.c) ? metrics::Role::teacher
                                              : metrics::Role::student;
}

RunResult run_training(const TrainConfig& cfg, const nn::ModelConfig& model_cfg,
                       const noise::NoisyDataset& data, const Dataset& test) {
  if (data.K() != model_cfg.num_classes)
    throw ConfigError("model has " + std::to_string(model_cfg.num_classes) +
                      " classes but the dataset has " + std::to_string(data.K()));
  if (cfg.batch < 1) throw ConfigError("batch size must be positive");
  if (cfg.epochs > 0 && data.train_indices.empty())
    throw ConfigError("empty training partition; run make_partitions first");

  const int c = model_cfg.in_channels;
  const int g = model_cfg.image_size;
  const Eigen::Index rl = static_cast<Eigen::Index>(c) * g * g;
  const int k = model_cfg.num_classes;

  RunResult res;
  res.student = nn::build_backbone(model_cfg, cfg.seed);
  res.student.set_requires_grad(true);
  res.teacher = res.student.clone();
  res.teacher.set_requires_grad(false);

  std::vector<Tensor> params = res.student.parameters();
  SgdState sgd;
  const bool consistency_on = schedule_ever_nonzero(cfg.weights.c);

  std::vector<uint8_t> in_ds(data.count(), 0);
  for (int i : data.supervised_indices) in_ds[static_cast<size_t>(i)] = 1;

  const int cycle_len = std::max(1, cfg.swa.cycle_epochs);
  double best_val = -1.0;
  std::vector<double> tmp(static_cast<size_t>(rl)), rot(static_cast<size_t>(rl));

  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cyclic_lr(e, cfg.optim.base_lr, cycle_len,
                                cfg.optim.pretrain_epochs, cfg.optim.lr_floor);
    const double w_s = schedule_value(cfg.weights.s, e);
    const double w_c = schedule_value(cfg.weights.c, e);
    const double w_r = schedule_value(cfg.weights.r, e);
    const double decay =
        e < cfg.weights.c.length ? cfg.ema.decay : cfg.ema.decay_late;
    const bool want_teacher = consistency_on && w_c != 0.0;
    // With w_r == 0 the rotated copies contribute nothing (the class losses
    // read only the q == 0 rows), so skip the 4x expansion entirely.  The
    // q == 0 rows reuse the unexpanded augment/dropout keys, which keeps a
    // zero-weight rotation run on the exact code path of a plain run.
    const bool rotate = cfg.rotation && w_r != 0.0;

    std::vector<int> order =
        shuffled(data.train_indices, derive_key(cfg.seed, "shuffle", e));
    LossParts sums;
    int batches = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch) {
      const int b = static_cast<int>(
          std::min(order.size() - start, static_cast<size_t>(cfg.batch)));
      const int rows = rotate ? 4 * b : b;

      LossBatch lb;
      lb.expanded = rotate;
      lb.observed.resize(static_cast<size_t>(b));
      lb.in_ds.resize(static_cast<size_t>(b));
      if (rotate) lb.rot_labels.resize(static_cast<size_t>(rows));

      Tensor x = Tensor::zeros({rows, c, g, g});
      nn::ForwardOptions opts;
      opts.train = true;
      opts.row_keys.resize(static_cast<size_t>(rows));
      if (model_cfg.norm.kind == nn::NormKind::batch && rotate)
        opts.stat_rows.assign(static_cast<size_t>(rows), 0);

      Tensor xt;
      nn::ForwardOptions topts;
      if (want_teacher) {
        xt = Tensor::zeros({b, c, g, g});
        topts.train = true;
        topts.update_running_stats = false;
        topts.row_keys.resize(static_cast<size_t>(b));
      }

      for (int i = 0; i < b; ++i) {
        const int n = order[start + static_cast<size_t>(i)];
        lb.observed[static_cast<size_t>(i)] = data.observed_label(n);
        lb.in_ds[static_cast<size_t>(i)] = in_ds[static_cast<size_t>(n)];

        RngStream geo(derive_key(cfg.seed, "aug-s", static_cast<uint64_t>(e),
                                 static_cast<uint64_t>(n)));
        geometric_augment(tmp.data(), data.image(n), c, g, geo, cfg.augment);
        if (rotate) {
          for (int q = 0; q < 4; ++q) {
            rotation::rotate90_buffer(tmp.data(), rot.data(), c, g, g, q);
            double* dst = x.ptr() + static_cast<Eigen::Index>(4 * i + q) * rl;
            std::memcpy(dst, rot.data(), static_cast<size_t>(rl) * sizeof(double));
            RngStream nz(derive_key(cfg.seed, "aug-s-noise",
                                    static_cast<uint64_t>(e),
                                    static_cast<uint64_t>(n),
                                    static_cast<uint64_t>(q)));
            add_pixel_noise(dst, rl, cfg.augment.noise_sigma, nz);
            opts.row_keys[static_cast<size_t>(4 * i + q)] =
                derive_key(cfg.seed, "drop-s", static_cast<uint64_t>(e),
                           static_cast<uint64_t>(n), static_cast<uint64_t>(q));
            if (!opts.stat_rows.empty())
              opts.stat_rows[static_cast<size_t>(4 * i + q)] = q == 0 ? 1 : 0;
            lb.rot_labels[static_cast<size_t>(4 * i + q)] = q;
          }
        } else {
          double* dst = x.ptr() + static_cast<Eigen::Index>(i) * rl;
          std::memcpy(dst, tmp.data(), static_cast<size_t>(rl) * sizeof(double));
          RngStream nz(derive_key(cfg.seed, "aug-s-noise",
                                  static_cast<uint64_t>(e),
                                  static_cast<uint64_t>(n), 0));
          add_pixel_noise(dst, rl, cfg.augment.noise_sigma, nz);
          opts.row_keys[static_cast<size_t>(i)] =
              derive_key(cfg.seed, "drop-s", static_cast<uint64_t>(e),
                         static_cast<uint64_t>(n), 0);
        }

        if (want_teacher) {
          RngStream tgeo(derive_key(cfg.seed, "aug-t", static_cast<uint64_t>(e),
                                    static_cast<uint64_t>(n)));
          double* dst = xt.ptr() + static_cast<Eigen::Index>(i) * rl;
          geometric_augment(dst, data.image(n), c, g, tgeo, cfg.augment);
          RngStream nz(derive_key(cfg.seed, "aug-t-noise",
                                  static_cast<uint64_t>(e),
                                  static_cast<uint64_t>(n), 0));
          add_pixel_noise(dst, rl, cfg.augment.noise_sigma, nz);
          topts.row_keys[static_cast<size_t>(i)] =
              derive_key(cfg.seed, "drop-t", static_cast<uint64_t>(e),
                         static_cast<uint64_t>(n), 0);
        }
      }

      Tensor teacher_probs;
      if (want_teacher) {
        nn::ForwardResult tout = nn::forward(res.teacher, xt, topts);
        teacher_probs = Tensor::from_array(
            {b, k}, ops::softmax_rows(tout.class_logits.data(), b, k));
      }

      LossParts parts;
      Tensor loss;
      try {
        Tape tape;
        TapeScope scope(tape);
        nn::ForwardResult out = nn::forward(res.student, x, opts);
        loss = rdcr_loss(out, teacher_probs, lb, w_s, w_c, w_r,
                         cfg.consistency, parts);
        if (loss.tracked()) backward(loss);
      } catch (const DivergenceError& err) {
        throw DivergenceError(std::string(err.what()) + " (epoch " +
                              std::to_string(e) + ", batch " +
                              std::to_string(batches) + ")");
      }
      if (loss.tracked()) {
        clip_gradients(params, cfg.clip_threshold);
        sgd_step(params, sgd, lr, cfg.optim.momentum, cfg.optim.weight_decay);
        res.student.zero_grad();
      }
      ema_update(res.teacher, res.student, decay);

      sums.sup += parts.sup;
      sums.cons += parts.cons;
      sums.rot += parts.rot;
      sums.total += parts.total;
      ++batches;
    }

    if (cfg.swa.cycles > 0 && e >= cfg.optim.pretrain_epochs) {
      const int pos = (e - cfg.optim.pretrain_epochs) % cycle_len;
      if (pos >= cycle_len - cfg.swa.captures_per_cycle)
        res.swa.capture(res.student);
    }

    metrics::MetricsRecord r;
    r.epoch = e;
    r.lr = lr;
    r.w_s = w_s;
    r.w_c = w_c;
    r.w_r = w_r;
    if (batches > 0) {
      r.loss_sup = sums.sup / batches;
      r.loss_cons = sums.cons / batches;
      r.loss_rot = sums.rot / batches;
      r.loss_total = sums.total / batches;
    }
    r.test_acc_student = evaluate(res.student, test, kEvalBatch);
    r.test_acc_teacher = evaluate(res.teacher, test, kEvalBatch);
    if (res.swa.captures > 0)
      r.test_acc_swa = evaluate(res.swa.params, test, kEvalBatch);

    // Pseudo labels and the validation probe always read a live network; the
    // SWA average only exists as snapshots, so they track the teacher (or the
    // student when no teacher is trained) even when SWA is what gets reported.
    nn::NetworkParams& role_params =
        schedule_ever_nonzero(cfg.weights.c) ? res.teacher : res.student;
    if (!data.validation_indices.empty()) {
      std::vector<int> pred = predict_rows(
          role_params,
          [&](int i) {
            return data.image(data.validation_indices[static_cast<size_t>(i)]);
          },
          static_cast<int>(data.validation_indices.size()), kEvalBatch);
      std::vector<int> truth(data.validation_indices.size());
      for (size_t i = 0; i < truth.size(); ++i)
        truth[i] = data.audit_true_label(data.validation_indices[i]);
      r.val_acc = metrics::accuracy(pred, truth);
    }
    if (!data.train_indices.empty()) {
      PseudoLabels pl =
          pseudo_labels(role_params, data, data.train_indices, kEvalBatch);
      std::vector<int> truth(data.train_indices.size());
      for (size_t i = 0; i < truth.size(); ++i)
        truth[i] = data.audit_true_label(data.train_indices[i]);
      r.pseudo_acc = metrics::accuracy(pl.labels, truth);
    }
    res.log.push_back(r);

    if (r.val_acc > best_val) {
      best_val = r.val_acc;
      res.best = role_params.clone();
      res.best.set_requires_grad(false);
      res.best_epoch = e;
    }
  }

  return res;
}

}  // namespace rdcr::train
