#include "rdcr/nn.hpp"

#include <cmath>

#include "rdcr/ops.hpp"

namespace rdcr::nn {

Normalization parse_norm(const std::string& name) {
  Normalization n;
  if (name == "bn") n.kind = NormKind::batch;
  else if (name == "in") n.kind = NormKind::instance;
  else if (name == "ln") n.kind = NormKind::layer;
  else if (name == "gn") n.kind = NormKind::group;
  else if (name == "gn+ws") { n.kind = NormKind::group; n.weight_standardization = true; }
  else throw ConfigError("unknown normalization kind: " + name);
  return n;
}

std::string norm_name(const Normalization& n) {
  switch (n.kind) {
    case NormKind::batch: return "bn";
    case NormKind::instance: return "in";
    case NormKind::layer: return "ln";
    case NormKind::group: return n.weight_standardization ? "gn+ws" : "gn";
  }
  return "?";
}

Tensor weight_standardize(const Tensor& weight, double epsilon) {
  if (weight.rank() != 4) throw ShapeError("weight_standardize: weight must be [O,C,kH,kW]");
  if (epsilon <= 0.0) throw ShapeError("weight_standardize: epsilon must be positive");
  const int o = weight.dim(0);
  const Eigen::Index m = weight.numel() / o;
  Tensor out = Tensor::zeros(weight.shape());
  auto divisor = std::make_shared<Eigen::ArrayXd>(o);
  auto clamped = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(o));
  for (int f = 0; f < o; ++f) {
    auto wf = weight.data().segment(static_cast<Eigen::Index>(f) * m, m);
    const double mu = wf.mean();
    const double sd = std::sqrt((wf - mu).square().mean());
    const bool clip = sd < epsilon;
    const double s = clip ? epsilon : sd;
    (*divisor)[f] = s;
    (*clamped)[static_cast<size_t>(f)] = clip ? 1 : 0;
    out.data().segment(static_cast<Eigen::Index>(f) * m, m) = (wf - mu) / s;
  }
  bool gw = weight.tracked();
  ops::detail::record("weight_standardize", {weight}, out, [=]() mutable {
    if (!gw) return;
    for (int f = 0; f < o; ++f) {
      const Eigen::Index off = static_cast<Eigen::Index>(f) * m;
      auto g = out.impl()->grad.segment(off, m);
      auto y = out.data().segment(off, m);
      const double s = (*divisor)[f];
      if ((*clamped)[static_cast<size_t>(f)])
        weight.impl()->grad.segment(off, m) += (g - g.mean()) / s;
      else
        weight.impl()->grad.segment(off, m) +=
            (g - g.mean() - y * (g * y).mean()) / s;
    }
  });
  return out;
}

namespace {

int resolve_groups(const Normalization& norm, int channels) {
  switch (norm.kind) {
    case NormKind::layer: return 1;
    case NormKind::instance: return channels;
    case NormKind::group:
      if (norm.group_size <= 0 || channels % norm.group_size != 0)
        throw ShapeError("group_norm: channel count " + std::to_string(channels) +
                         " not divisible by group size " +
                         std::to_string(norm.group_size));
      return channels / norm.group_size;
    case NormKind::batch:
      throw ShapeError("group_norm: batch kind goes through batch_norm");
  }
  return 1;
}

}  // namespace

Tensor group_norm(const Tensor& x, const Normalization& norm,
                  const Tensor& gamma, const Tensor& beta) {
  if (x.rank() != 4) throw ShapeError("group_norm: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("group_norm: gamma/beta must have one entry per channel");
  const int groups = resolve_groups(norm, c);
  const int gc = c / groups;
  const Eigen::Index m = gc * hw;
  const double eps = norm.epsilon;

  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<Eigen::ArrayXd>(x.numel());
  auto inv = std::make_shared<Eigen::ArrayXd>(static_cast<Eigen::Index>(n) * groups);
  for (int i = 0; i < n; ++i)
    for (int g = 0; g < groups; ++g) {
      const Eigen::Index off = (static_cast<Eigen::Index>(i) * c + g * gc) * hw;
      auto slice = x.data().segment(off, m);
      const double mu = slice.mean();
      const double var = (slice - mu).square().mean();
      const double iv = 1.0 / std::sqrt(var + eps);
      (*inv)[static_cast<Eigen::Index>(i) * groups + g] = iv;
      xhat->segment(off, m) = (slice - mu) * iv;
      for (int j = 0; j < gc; ++j) {
        const int ch = g * gc + j;
        out.data().segment(off + j * hw, hw) =
            gamma.data()[ch] * xhat->segment(off + j * hw, hw) + beta.data()[ch];
      }
    }

  bool gx = x.tracked(), gg = gamma.tracked(), gb = beta.tracked();
  ops::detail::record("group_norm", {x, gamma, beta}, out, [=]() mutable {
    const double* go = out.impl()->grad.data();
    const double* xh = xhat->data();
    double* gxp = gx ? x.impl()->grad.data() : nullptr;
    double* ggp = gg ? gamma.impl()->grad.data() : nullptr;
    double* gbp = gb ? beta.impl()->grad.data() : nullptr;
    Eigen::ArrayXd ghat(m);
    for (int i = 0; i < n; ++i)
      for (int g = 0; g < groups; ++g) {
        const Eigen::Index off = (static_cast<Eigen::Index>(i) * c + g * gc) * hw;
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < gc; ++j) {
          const int ch = g * gc + j;
          const double gm = gamma.data()[ch];
          const double* gp = go + off + j * hw;
          const double* xp = xh + off + j * hw;
          double* hp = ghat.data() + j * hw;
          double sg = 0.0, sgx = 0.0;
          for (Eigen::Index t = 0; t < hw; ++t) {
            const double gv = gp[t], xv = xp[t];
            const double hv = gv * gm;
            hp[t] = hv;
            s1 += hv;
            s2 += hv * xv;
            sg += gv;
            sgx += gv * xv;
          }
          if (ggp) ggp[ch] += sgx;
          if (gbp) gbp[ch] += sg;
        }
        if (gxp) {
          const double iv = (*inv)[static_cast<Eigen::Index>(i) * groups + g];
          const double m1 = s1 / static_cast<double>(m);
          const double m2 = s2 / static_cast<double>(m);
          const double* hp = ghat.data();
          const double* xp = xh + off;
          double* dst = gxp + off;
          for (Eigen::Index t = 0; t < m; ++t)
            dst[t] += iv * (hp[t] - m1 - xp[t] * m2);
        }
      }
  });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Eigen::ArrayXd& running_mean, Eigen::ArrayXd& running_var,
                  bool train, double momentum, double epsilon,
                  const std::vector<uint8_t>& stat_rows, bool update_running) {
  if (x.rank() != 4) throw ShapeError("batch_norm: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.size() != c ||
      running_var.size() != c)
    throw ShapeError("batch_norm: per-channel vectors must match channel count");
  if (!stat_rows.empty() && static_cast<int>(stat_rows.size()) != n)
    throw ShapeError("batch_norm: stat_rows mask must cover every row");

  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<Eigen::ArrayXd>(x.numel());
  auto inv = std::make_shared<Eigen::ArrayXd>(c);
  const Eigen::Index chw = static_cast<Eigen::Index>(c) * hw;

  for (int ch = 0; ch < c; ++ch) {
    double mu, var;
    if (train) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        auto seg = x.data().segment(static_cast<Eigen::Index>(i) * chw + ch * hw, hw);
        s += seg.sum();
      }
      mu = s / (static_cast<double>(n) * hw);
      for (int i = 0; i < n; ++i) {
        auto seg = x.data().segment(static_cast<Eigen::Index>(i) * chw + ch * hw, hw);
        s2 += (seg - mu).square().sum();
      }
      var = s2 / (static_cast<double>(n) * hw);
    } else {
      mu = running_mean[ch];
      var = running_var[ch];
    }
    const double iv = 1.0 / std::sqrt(var + epsilon);
    (*inv)[ch] = iv;
    for (int i = 0; i < n; ++i) {
      const Eigen::Index off = static_cast<Eigen::Index>(i) * chw + ch * hw;
      xhat->segment(off, hw) = (x.data().segment(off, hw) - mu) * iv;
      out.data().segment(off, hw) =
          gamma.data()[ch] * xhat->segment(off, hw) + beta.data()[ch];
    }
  }

  if (train && update_running) {
    int rows = 0;
    for (int i = 0; i < n; ++i)
      if (stat_rows.empty() || stat_rows[static_cast<size_t>(i)]) ++rows;
    if (rows == 0) throw ShapeError("batch_norm: no rows selected for statistics");
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        if (!stat_rows.empty() && !stat_rows[static_cast<size_t>(i)]) continue;
        auto seg = x.data().segment(static_cast<Eigen::Index>(i) * chw + ch * hw, hw);
        s += seg.sum();
      }
      const double mu = s / (static_cast<double>(rows) * hw);
      for (int i = 0; i < n; ++i) {
        if (!stat_rows.empty() && !stat_rows[static_cast<size_t>(i)]) continue;
        auto seg = x.data().segment(static_cast<Eigen::Index>(i) * chw + ch * hw, hw);
        s2 += (seg - mu).square().sum();
      }
      const double var = s2 / (static_cast<double>(rows) * hw);
      running_mean[ch] = momentum * running_mean[ch] + (1.0 - momentum) * mu;
      running_var[ch] = momentum * running_var[ch] + (1.0 - momentum) * var;
    }
  }

  bool gx = x.tracked(), gg = gamma.tracked(), gb = beta.tracked();
  bool trained = train;
  ops::detail::record("batch_norm", {x, gamma, beta}, out, [=]() mutable {
    const auto& go = out.impl()->grad;
    Eigen::ArrayXd ghat(static_cast<Eigen::Index>(n) * hw);
    Eigen::ArrayXd xh(static_cast<Eigen::Index>(n) * hw);
    for (int ch = 0; ch < c; ++ch) {
      double gsum = 0.0, gdot = 0.0;
      for (int i = 0; i < n; ++i) {
        const Eigen::Index off = static_cast<Eigen::Index>(i) * chw + ch * hw;
        ghat.segment(static_cast<Eigen::Index>(i) * hw, hw) =
            go.segment(off, hw) * gamma.data()[ch];
        xh.segment(static_cast<Eigen::Index>(i) * hw, hw) = xhat->segment(off, hw);
        gsum += go.segment(off, hw).sum();
        gdot += (go.segment(off, hw) * xhat->segment(off, hw)).sum();
      }
      if (gg) gamma.impl()->grad[ch] += gdot;
      if (gb) beta.impl()->grad[ch] += gsum;
      if (gx) {
        const double iv = (*inv)[ch];
        Eigen::ArrayXd dx;
        if (trained) {
          const double m1 = ghat.mean();
          const double m2 = (ghat * xh).mean();
          dx = iv * (ghat - m1 - xh * m2);
        } else {
          dx = iv * ghat;  // running stats are constants
        }
        for (int i = 0; i < n; ++i)
          x.impl()->grad.segment(static_cast<Eigen::Index>(i) * chw + ch * hw, hw) +=
              dx.segment(static_cast<Eigen::Index>(i) * hw, hw);
      }
    }
  });
  return out;
}

namespace {

const int kBaseWidths[9] = {128, 128, 128, 256, 256, 256, 512, 256, 128};

Tensor init_uniform(std::vector<int> shape, int fan_in, uint64_t key) {
  RngStream rng(key);
  const double bound = std::sqrt(6.0 / fan_in);
  return Tensor::uniform(std::move(shape), -bound, bound, rng, true);
}

}  // namespace

NetworkParams build_backbone(const ModelConfig& config, uint64_t seed) {
  if (config.num_classes < 2) throw ConfigError("build_backbone: need at least 2 classes");
  if (config.width_multiplier <= 0.0)
    throw ConfigError("build_backbone: width multiplier must be positive");
  NetworkParams p;
  p.config = config;
  for (int i = 0; i < 9; ++i) {
    int w = static_cast<int>(std::lround(kBaseWidths[i] * config.width_multiplier));
    if (w < 1) throw ConfigError("build_backbone: width multiplier collapses a layer");
    if (config.norm.kind == NormKind::group && w % config.norm.group_size != 0)
      throw ConfigError("build_backbone: conv width " + std::to_string(w) +
                        " not divisible by group size " +
                        std::to_string(config.norm.group_size));
    p.widths.push_back(w);
  }
  int cin = config.in_channels;
  for (int i = 0; i < 9; ++i) {
    ConvLayer layer;
    const int cout = p.widths[static_cast<size_t>(i)];
    layer.weight = init_uniform({cout, cin, 3, 3}, cin * 9,
                                derive_key(seed, "init-conv", static_cast<uint64_t>(i)));
    layer.bias = Tensor::zeros({cout}, true);
    layer.gamma = Tensor::full({cout}, 1.0, true);
    layer.beta = Tensor::zeros({cout}, true);
    layer.running_mean = Eigen::ArrayXd::Zero(cout);
    layer.running_var = Eigen::ArrayXd::Ones(cout);
    p.backbone.push_back(std::move(layer));
    cin = cout;
  }
  const int f = p.widths.back();
  p.class_w = init_uniform({f, config.num_classes}, f, derive_key(seed, "init-class"));
  p.class_b = Tensor::zeros({config.num_classes}, true);
  p.rot_w = init_uniform({f, 4}, f, derive_key(seed, "init-rot"));
  p.rot_b = Tensor::zeros({4}, true);
  return p;
}

std::vector<Tensor> NetworkParams::parameters() {
  std::vector<Tensor> out;
  for (auto& l : backbone) {
    out.push_back(l.weight);
    out.push_back(l.bias);
    out.push_back(l.gamma);
    out.push_back(l.beta);
  }
  out.push_back(class_w);
  out.push_back(class_b);
  out.push_back(rot_w);
  out.push_back(rot_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> NetworkParams::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < backbone.size(); ++i) {
    const std::string base = "backbone." + std::to_string(i) + ".";
    out.emplace_back(base + "weight", backbone[i].weight);
    out.emplace_back(base + "bias", backbone[i].bias);
    out.emplace_back(base + "gamma", backbone[i].gamma);
    out.emplace_back(base + "beta", backbone[i].beta);
  }
  out.emplace_back("class_head.weight", class_w);
  out.emplace_back("class_head.bias", class_b);
  out.emplace_back("rot_head.weight", rot_w);
  out.emplace_back("rot_head.bias", rot_b);
  return out;
}

void NetworkParams::set_requires_grad(bool v) {
  for (auto& t : parameters()) t.set_requires_grad(v);
}

void NetworkParams::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

NetworkParams NetworkParams::clone() const {
  NetworkParams out;
  out.config = config;
  out.widths = widths;
  auto copy = [](const Tensor& t) {
    return Tensor::from_array(t.shape(), t.data(), t.requires_grad());
  };
  for (const auto& l : backbone) {
    ConvLayer c;
    c.weight = copy(l.weight);
    c.bias = copy(l.bias);
    c.gamma = copy(l.gamma);
    c.beta = copy(l.beta);
    c.running_mean = l.running_mean;
    c.running_var = l.running_var;
    out.backbone.push_back(std::move(c));
  }
  out.class_w = copy(class_w);
  out.class_b = copy(class_b);
  out.rot_w = copy(rot_w);
  out.rot_b = copy(rot_b);
  return out;
}

long NetworkParams::param_count() {
  long n = 0;
  for (auto& t : parameters()) n += static_cast<long>(t.numel());
  return n;
}

// Stages: 0-2 conv block 1, 3 pool+dropout, 4-6 block 2, 7 pool+dropout,
// 8-10 block 3, 11 global average pool, 12 heads.
int stage_count() { return 13; }

int stage_of_conv(int conv_index) {
  if (conv_index < 3) return conv_index;
  if (conv_index < 6) return conv_index + 1;
  return conv_index + 2;
}

namespace {

Tensor dropout_stage(const Tensor& x, double p, const ForwardOptions& opts,
                     int stage) {
  if (!opts.train || p <= 0.0) return x;
  const int n = x.dim(0);
  const Eigen::Index row = x.numel() / n;
  Tensor mask = Tensor::zeros(x.shape());
  const double keep = 1.0 / (1.0 - p);
  if (opts.row_keys.empty()) {
    RngStream rng(derive_key(opts.flat_dropout_key, "drop-stage",
                             static_cast<uint64_t>(stage)));
    for (Eigen::Index i = 0; i < mask.numel(); ++i)
      mask.data()[i] = rng.uniform() >= p ? keep : 0.0;
  } else {
    if (static_cast<int>(opts.row_keys.size()) != n)
      throw ShapeError("forward: row_keys must cover every row");
    for (int r = 0; r < n; ++r) {
      RngStream rng(derive_key(opts.row_keys[static_cast<size_t>(r)], "drop-stage",
                               static_cast<uint64_t>(stage)));
      for (Eigen::Index i = 0; i < row; ++i)
        mask.data()[static_cast<Eigen::Index>(r) * row + i] =
            rng.uniform() >= p ? keep : 0.0;
    }
  }
  return ops::mul(x, mask);
}

Tensor conv_block(NetworkParams& params, int conv, const Tensor& x,
                  const ForwardOptions& opts) {
  ConvLayer& l = params.backbone[static_cast<size_t>(conv)];
  const Normalization& norm = params.config.norm;
  Tensor w = norm.weight_standardization ? weight_standardize(l.weight, norm.epsilon)
                                         : l.weight;
  Tensor y = ops::conv2d(x, w, l.bias, 1, 1);
  Tensor normed =
      norm.kind == NormKind::batch
          ? batch_norm(y, l.gamma, l.beta, l.running_mean, l.running_var,
                       opts.train, 0.9, norm.epsilon, opts.stat_rows,
                       opts.update_running_stats)
          : group_norm(y, norm, l.gamma, l.beta);
  return ops::relu(normed);
}

Tensor run_stage(NetworkParams& params, int s, const Tensor& x,
                 const ForwardOptions& opts) {
  const double p = params.config.dropout_p;
  switch (s) {
    case 0: case 1: case 2:
      return conv_block(params, s, x, opts);
    case 3:
      return dropout_stage(ops::max_pool2d(x, 2, 2), p, opts, 3);
    case 4: case 5: case 6:
      return conv_block(params, s - 1, x, opts);
    case 7:
      return dropout_stage(ops::max_pool2d(x, 2, 2), p, opts, 7);
    case 8: case 9: case 10:
      return conv_block(params, s - 2, x, opts);
    case 11:
      return ops::global_average_pool(x);
  }
  throw ShapeError("run_stage: bad stage index");
}

}  // namespace

ForwardResult forward_from(NetworkParams& params, int stage, const Tensor& act,
                           const ForwardOptions& opts) {
  Tensor x = act;
  for (int s = stage; s < 12; ++s) x = run_stage(params, s, x, opts);
  ForwardResult out;
  out.features = x;
  out.class_logits = ops::linear(x, params.class_w, params.class_b);
  out.rot_logits = ops::linear(x, params.rot_w, params.rot_b);
  return out;
}

ForwardResult forward(NetworkParams& params, const Tensor& x,
                      const ForwardOptions& opts) {
  if (x.rank() != 4 || x.dim(1) != params.config.in_channels ||
      x.dim(2) != params.config.image_size || x.dim(3) != params.config.image_size)
    throw ShapeError("forward: input does not match the configured image shape");
  return forward_from(params, 0, x, opts);
}

std::vector<Tensor> forward_activations(NetworkParams& params, const Tensor& x,
                                        const ForwardOptions& opts) {
  std::vector<Tensor> acts;
  acts.reserve(static_cast<size_t>(stage_count()));
  Tensor cur = x;
  for (int s = 0; s < 12; ++s) {
    acts.push_back(cur);
    cur = run_stage(params, s, cur, opts);
  }
  acts.push_back(cur);  // input to the heads
  return acts;
}

}  // namespace rdcr::nn
