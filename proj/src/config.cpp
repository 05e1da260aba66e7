#include "rdcr/config.hpp"

#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rdcr/error.hpp"

namespace rdcr::config {
namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Pulls typed values out of the merged key map; anything left unconsumed at
// the end is an unknown key and fatal.
struct Puller {
  std::map<std::string, std::string> kv;
  std::set<std::string> consumed;

  explicit Puller(const KeyValues& items) {
    for (const auto& [k, v] : items) kv[k] = v;  // last assignment wins
  }

  const std::string* find(const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return nullptr;
    consumed.insert(key);
    return &it->second;
  }

  std::string str(const std::string& key, const std::string& def) {
    const std::string* v = find(key);
    return v ? *v : def;
  }

  double num(const std::string& key, double def) {
    const std::string* v = find(key);
    if (!v) return def;
    try {
      size_t pos = 0;
      double x = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key + ": '" + *v + "' is not a number");
    }
  }

  int integer(const std::string& key, int def) {
    const std::string* v = find(key);
    if (!v) return def;
    try {
      size_t pos = 0;
      long x = std::stol(*v, &pos, 10);
      if (pos != v->size()) throw std::invalid_argument("");
      return static_cast<int>(x);
    } catch (const std::exception&) {
      throw ConfigError(key + ": '" + *v + "' is not an integer");
    }
  }

  uint64_t unsigned64(const std::string& key, uint64_t def) {
    const std::string* v = find(key);
    if (!v) return def;
    try {
      size_t pos = 0;
      unsigned long long x = std::stoull(*v, &pos, 10);
      if (pos != v->size()) throw std::invalid_argument("");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key + ": '" + *v + "' is not an unsigned integer");
    }
  }

  bool boolean(const std::string& key, bool def) {
    const std::string* v = find(key);
    if (!v) return def;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError(key + ": '" + *v + "' is not a boolean");
  }

  void finish() const {
    std::string unknown;
    for (const auto& [k, v] : kv)
      if (!consumed.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
  }
};

train::Schedule pull_schedule(Puller& p, const std::string& prefix,
                              const train::Schedule& def) {
  train::Schedule s;
  s.kind = train::parse_schedule_kind(
      p.str(prefix + ".kind", train::schedule_kind_name(def.kind)));
  s.start_value = p.num(prefix + ".start", def.start_value);
  s.end_value = p.num(prefix + ".end", def.end_value);
  s.length = p.num(prefix + ".length", def.length);
  return s;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::string fmt_num(double v) {
  char buf[40];
  // shortest representation that parses back to the same double
  std::snprintf(buf, sizeof buf, "%.17g", v);
  double back;
  std::sscanf(buf, "%lf", &back);
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof probe, "%.*g", prec, v);
    std::sscanf(probe, "%lf", &back);
    if (back == v) return probe;
  }
  return buf;
}

}  // namespace

KeyValues parse_text(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValues parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path);
}

ExperimentConfig resolve(const KeyValues& kv) {
  Puller p(kv);
  ExperimentConfig c;

  c.dataset.kind = p.str("dataset.kind", c.dataset.kind);
  c.dataset.dir = p.str("dataset.dir", c.dataset.dir);
  c.dataset.classes = p.integer("dataset.classes", c.dataset.classes);
  c.dataset.image_size = p.integer("dataset.image_size", c.dataset.image_size);
  c.dataset.train_count = p.integer("dataset.train_count", c.dataset.train_count);
  c.dataset.test_count = p.integer("dataset.test_count", c.dataset.test_count);
  require(c.dataset.kind == "shapeset" || c.dataset.kind == "cifar10" ||
              c.dataset.kind == "cifar100",
          "dataset.kind: unknown dataset '" + c.dataset.kind + "'");

  // Inline forms name the model and a parameter together, e.g.
  // noise.symmetric.eps = 0.8.  A config may name at most one model.
  std::string inline_kind;
  auto claim = [&](const char* kind) {
    if (!inline_kind.empty() && inline_kind != kind)
      throw ConfigError("config names two noise models: " + inline_kind +
                        " and " + kind);
    inline_kind = kind;
  };
  if (p.kv.count("noise.symmetric.eps")) {
    claim("symmetric");
    c.noise.eps = p.num("noise.symmetric.eps", c.noise.eps);
  }
  if (p.kv.count("noise.symmetric.includes_self")) {
    claim("symmetric");
    c.noise.includes_self =
        p.boolean("noise.symmetric.includes_self", c.noise.includes_self);
  }
  if (p.kv.count("noise.asymmetric.eps")) {
    claim("asymmetric");
    c.noise.eps = p.num("noise.asymmetric.eps", c.noise.eps);
  }
  if (p.kv.count("noise.asymmetric.pairing")) {
    claim("asymmetric");
    c.noise.pairing = p.str("noise.asymmetric.pairing", c.noise.pairing);
  }
  if (p.kv.count("noise.semi_sl.labeled")) {
    claim("semi_sl");
    c.noise.labeled = p.integer("noise.semi_sl.labeled", c.noise.labeled);
  }
  const bool kind_explicit = p.kv.count("noise.kind") > 0;
  c.noise.kind = p.str("noise.kind", c.noise.kind);
  if (!inline_kind.empty()) {
    if (kind_explicit && c.noise.kind != inline_kind)
      throw ConfigError("noise.kind = " + c.noise.kind +
                        " conflicts with noise." + inline_kind + ".* keys");
    c.noise.kind = inline_kind;
  }
  c.noise.eps = p.num("noise.eps", c.noise.eps);
  c.noise.includes_self = p.boolean("noise.includes_self", c.noise.includes_self);
  c.noise.pairing = p.str("noise.pairing", c.noise.pairing);
  c.noise.labeled = p.integer("noise.labeled", c.noise.labeled);
  c.noise.validation_fraction =
      p.num("noise.validation_fraction", c.noise.validation_fraction);
  require(c.noise.kind == "none" || c.noise.kind == "symmetric" ||
              c.noise.kind == "asymmetric" || c.noise.kind == "semi_sl",
          "noise.kind: unknown noise model '" + c.noise.kind + "'");
  require(c.noise.kind != "semi_sl" || c.noise.labeled > 0,
          "noise.labeled: semi_sl needs a positive clean-label budget");

  c.width = p.num("model.width", c.width);
  c.norm = p.str("model.norm", c.norm);
  c.group_size = p.integer("model.group_size", c.group_size);
  c.dropout = p.num("model.dropout", c.dropout);
  nn::parse_norm(c.norm);  // validates the name

  c.weight.s = pull_schedule(p, "weight.s", c.weight.s);
  c.weight.c = pull_schedule(p, "weight.c", c.weight.c);
  c.weight.r = pull_schedule(p, "weight.r", c.weight.r);

  c.train.epochs = p.integer("train.epochs", c.train.epochs);
  c.train.batch = p.integer("train.batch", c.train.batch);
  c.train.seed = p.unsigned64("train.seed", c.train.seed);
  c.train.lr = p.num("train.lr", c.train.lr);
  c.train.lr_floor = p.num("train.lr_floor", c.train.lr_floor);
  c.train.momentum = p.num("train.momentum", c.train.momentum);
  c.train.weight_decay = p.num("train.weight_decay", c.train.weight_decay);
  c.train.swa_cycles = p.integer("train.swa_cycles", c.train.swa_cycles);
  c.train.swa_cycle_epochs =
      p.integer("train.swa_cycle_epochs", c.train.swa_cycle_epochs);
  c.train.swa_captures_per_cycle =
      p.integer("train.swa_captures_per_cycle", c.train.swa_captures_per_cycle);
  c.train.pretrain_epochs = p.integer(
      "train.pretrain_epochs",
      c.train.epochs - c.train.swa_cycles * c.train.swa_cycle_epochs);
  c.train.consistency = p.str("train.consistency", c.train.consistency);
  c.train.clip = p.num("train.clip", c.train.clip);
  c.train.ema_decay = p.num("train.ema_decay", c.train.ema_decay);
  c.train.ema_decay_late = p.num("train.ema_decay_late", c.train.ema_decay_late);
  c.train.rotation = p.boolean("train.rotation", c.train.rotation);

  require(c.train.epochs >= 0, "train.epochs: must be nonnegative");
  require(c.train.batch >= 1, "train.batch: must be positive");
  require(c.train.swa_cycles >= 0, "train.swa_cycles: must be nonnegative");
  require(c.train.swa_cycles == 0 || c.train.swa_cycle_epochs >= 1,
          "train.swa_cycle_epochs: must be positive");
  require(c.train.swa_captures_per_cycle >= 1,
          "train.swa_captures_per_cycle: must be positive");
  require(c.train.pretrain_epochs >= 0,
          "train.pretrain_epochs: must be nonnegative");
  require(c.train.pretrain_epochs +
                  c.train.swa_cycles * c.train.swa_cycle_epochs ==
              c.train.epochs,
          "train.epochs must equal pretrain_epochs + swa_cycles * "
          "swa_cycle_epochs");
  require(c.train.consistency == "mse" || c.train.consistency == "kl",
          "train.consistency: must be mse or kl");
  require(c.train.clip > 0.0, "train.clip: must be positive");

  c.augment.translate = p.integer("augment.translate", c.augment.translate);
  c.augment.hflip = p.boolean("augment.hflip", c.augment.hflip);
  c.augment.noise_sigma = p.num("augment.noise_sigma", c.augment.noise_sigma);
  require(c.augment.translate >= 0, "augment.translate: must be nonnegative");
  require(c.augment.noise_sigma >= 0.0,
          "augment.noise_sigma: must be nonnegative");

  c.out_dir = p.str("output.dir", c.out_dir);

  p.finish();
  return c;
}

nn::ModelConfig ExperimentConfig::model_config() const {
  nn::ModelConfig m;
  if (dataset.kind == "shapeset") {
    m.in_channels = 1;
    m.image_size = dataset.image_size;
    m.num_classes = dataset.classes;
  } else {
    m.in_channels = 3;
    m.image_size = 32;
    m.num_classes = dataset.kind == "cifar10" ? 10 : 100;
  }
  m.width_multiplier = width;
  m.norm = nn::parse_norm(norm);
  m.norm.group_size = group_size;
  m.dropout_p = dropout;
  return m;
}

std::string resolved_text(const ExperimentConfig& c) {
  std::ostringstream out;
  auto kv = [&](const std::string& k, const std::string& v) {
    out << k << " = " << v << "\n";
  };
  auto kn = [&](const std::string& k, double v) { kv(k, fmt_num(v)); };
  auto ki = [&](const std::string& k, long long v) { kv(k, std::to_string(v)); };
  auto kb = [&](const std::string& k, bool v) { kv(k, v ? "true" : "false"); };
  auto ks = [&](const std::string& prefix, const train::Schedule& s) {
    kv(prefix + ".kind", train::schedule_kind_name(s.kind));
    kn(prefix + ".start", s.start_value);
    kn(prefix + ".end", s.end_value);
    kn(prefix + ".length", s.length);
  };

  kv("dataset.kind", c.dataset.kind);
  if (!c.dataset.dir.empty()) kv("dataset.dir", c.dataset.dir);
  ki("dataset.classes", c.dataset.classes);
  ki("dataset.image_size", c.dataset.image_size);
  ki("dataset.train_count", c.dataset.train_count);
  ki("dataset.test_count", c.dataset.test_count);
  kv("noise.kind", c.noise.kind);
  kn("noise.eps", c.noise.eps);
  kb("noise.includes_self", c.noise.includes_self);
  kv("noise.pairing", c.noise.pairing);
  ki("noise.labeled", c.noise.labeled);
  kn("noise.validation_fraction", c.noise.validation_fraction);
  kn("model.width", c.width);
  kv("model.norm", c.norm);
  ki("model.group_size", c.group_size);
  kn("model.dropout", c.dropout);
  ks("weight.s", c.weight.s);
  ks("weight.c", c.weight.c);
  ks("weight.r", c.weight.r);
  ki("train.epochs", c.train.epochs);
  ki("train.batch", c.train.batch);
  kv("train.seed", std::to_string(c.train.seed));
  kn("train.lr", c.train.lr);
  kn("train.lr_floor", c.train.lr_floor);
  kn("train.momentum", c.train.momentum);
  kn("train.weight_decay", c.train.weight_decay);
  ki("train.pretrain_epochs", c.train.pretrain_epochs);
  ki("train.swa_cycles", c.train.swa_cycles);
  ki("train.swa_cycle_epochs", c.train.swa_cycle_epochs);
  ki("train.swa_captures_per_cycle", c.train.swa_captures_per_cycle);
  kv("train.consistency", c.train.consistency);
  kn("train.clip", c.train.clip);
  kn("train.ema_decay", c.train.ema_decay);
  kn("train.ema_decay_late", c.train.ema_decay_late);
  kb("train.rotation", c.train.rotation);
  ki("augment.translate", c.augment.translate);
  kb("augment.hflip", c.augment.hflip);
  kn("augment.noise_sigma", c.augment.noise_sigma);
  kv("output.dir", c.out_dir);
  return out.str();
}

namespace {

// Publication-scale recipes.  The simplified-NL family trains the teacher
// baseline length (180 epochs, plain cosine); adding cycles on top is an
// override.  The semi-supervised family is the long cyclic recipe
// (180 pretrain + 20 cycles of 30).
std::string base_preset(const std::string& name) {
  std::ostringstream out;
  auto line = [&](const std::string& s) { out << s << "\n"; };
  bool semi = name.rfind("semisl-", 0) == 0;
  bool cifar100 = name == "semisl-10k";

  line("dataset.kind = " + std::string(cifar100 ? "cifar100" : "cifar10"));
  line("dataset.dir = data/" + std::string(cifar100 ? "cifar-100-binary"
                                                    : "cifar-10-batches-bin"));
  if (name == "sym20") {
    line("noise.kind = symmetric");
    line("noise.eps = 0.2");
  } else if (name == "sym50") {
    line("noise.kind = symmetric");
    line("noise.eps = 0.5");
  } else if (name == "sym80") {
    line("noise.kind = symmetric");
    line("noise.eps = 0.8");
  } else if (name == "asym40") {
    line("noise.kind = asymmetric");
    line("noise.eps = 0.4");
    line("noise.pairing = next");
  } else if (name == "semisl-1k") {
    line("noise.kind = semi_sl");
    line("noise.labeled = 1000");
  } else if (name == "semisl-2k") {
    line("noise.kind = semi_sl");
    line("noise.labeled = 2000");
  } else if (name == "semisl-4k") {
    line("noise.kind = semi_sl");
    line("noise.labeled = 4000");
  } else if (name == "semisl-10k") {
    line("noise.kind = semi_sl");
    line("noise.labeled = 10000");
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }

  line("model.width = 1.0");
  line("model.norm = gn+ws");
  line("train.batch = 100");
  line("train.lr = 0.05");
  line("train.weight_decay = 0.0001");
  line("augment.hflip = true");

  if (semi) {
    line("train.epochs = 780");
    line("train.pretrain_epochs = 180");
    line("train.swa_cycles = 20");
    line("train.swa_cycle_epochs = 30");
    line("weight.s.kind = constant");
    line("weight.s.start = 1.0");
    line("weight.s.end = 1.0");
    line("weight.c.kind = cosine_ramp_up");
    line("weight.c.start = 0.0");
    line(cifar100 ? "weight.c.end = 1000.0" : "weight.c.end = 100.0");
    line("weight.c.length = 234");
    line("weight.r.kind = constant");
    line(cifar100 ? "weight.r.start = 1.0" : "weight.r.start = 10.0");
    line(cifar100 ? "weight.r.end = 1.0" : "weight.r.end = 10.0");
  } else {
    line("train.epochs = 180");
    line("train.pretrain_epochs = 180");
    line("weight.s.kind = cosine_ramp_down");
    line("weight.s.start = 1.0");
    line("weight.s.end = 0.0");
    line("weight.s.length = 180");
    line("weight.c.kind = cosine_ramp_up");
    line("weight.c.start = 0.0");
    line("weight.c.end = 100.0");
    line("weight.c.length = 54");
    line("weight.r.kind = linear_ramp_up");
    if (name == "sym80") {
      line("weight.r.start = 0.3");
      line("weight.r.end = 0.5");
    } else {
      line("weight.r.start = 0.0");
      line("weight.r.end = 0.3");
    }
    line("weight.r.length = 180");
  }
  line("output.dir = runs/" + name);
  return out.str();
}

// Desk-scale remap: ShapeSet, tiny width, 60 epochs with a short cyclic
// tail.  Weight-schedule shapes survive; lengths shrink with the run and the
// clean-label budgets scale with the 3000-sample pool.
std::string tiny_overrides(const std::string& name) {
  std::ostringstream out;
  auto line = [&](const std::string& s) { out << s << "\n"; };
  bool semi = name.rfind("semisl-", 0) == 0;

  line("dataset.kind = shapeset");
  line("dataset.dir =");
  line("dataset.classes = 6");
  line("dataset.image_size = 16");
  line("dataset.train_count = 3000");
  line("dataset.test_count = 600");
  line("model.width = 0.125");
  line("train.batch = 32");
  line("train.lr = 0.05");
  line("augment.hflip = false");
  line("train.epochs = 60");
  line("train.pretrain_epochs = 30");
  line("train.swa_cycles = 6");
  line("train.swa_cycle_epochs = 5");
  if (semi) {
    int labeled = name == "semisl-1k"    ? 60
                  : name == "semisl-2k"  ? 120
                  : name == "semisl-4k"  ? 240
                                         : 600;
    line("noise.labeled = " + std::to_string(labeled));
    line("weight.c.end = 30.0");
    line("weight.c.length = 18");
  } else {
    line("weight.s.length = 60");
    line("weight.c.end = 30.0");
    line("weight.c.length = 18");
    line("weight.r.length = 60");
  }
  line("output.dir = runs/" + name + "-tiny");
  return out.str();
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"sym20",     "sym50",     "sym80",     "asym40",
          "semisl-1k", "semisl-2k", "semisl-4k", "semisl-10k"};
}

KeyValues preset_key_values(const std::string& name, bool scale_tiny) {
  KeyValues kv = parse_text(base_preset(name), "preset:" + name);
  if (scale_tiny) {
    KeyValues extra = parse_text(tiny_overrides(name), "preset:" + name + ":tiny");
    kv.insert(kv.end(), extra.begin(), extra.end());
  }
  return kv;
}

ExperimentConfig preset(const std::string& name, bool scale_tiny) {
  return resolve(preset_key_values(name, scale_tiny));
}

}  // namespace rdcr::config
