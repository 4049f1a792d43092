#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "brcsgan/corpus.hpp"
#include "brcsgan/discriminator.hpp"
#include "brcsgan/generator.hpp"
#include "brcsgan/trainer.hpp"

namespace brcsgan {

// The whole experiment in one flat key = value file: corpus recipe, model
// dimensions, training constants, evaluation settings, run seed. Unknown
// keys are errors; parse -> serialize -> parse is the identity.
struct ExperimentConfig {
  SyntheticTaskSpec corpus;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t t_max = 20;
  std::size_t disc_embed_dim = 32;
  std::size_t disc_kernels = 32;
  TrainConfig train;
  std::string optimizer_rule = "adam";
  std::size_t eval_beam = 10;
  double eval_length_penalty = 0.0;
  std::string run_dir;  // empty: resolved from the output root at dispatch
  std::uint64_t seed = 1;

  void validate() const {
    train.validate();
    if (corpus.vocab_size <= kNumReserved)
      throw std::invalid_argument("config: corpus.vocab_size too small");
    if (corpus.len_min < 1 || corpus.len_min > corpus.len_max)
      throw std::invalid_argument("config: bad corpus length range");
    if (static_cast<std::size_t>(corpus.len_max) > t_max - 1)
      throw std::invalid_argument("config: corpus.len_max must be <= model.t_max - 1");
    if (corpus.train_size <= 0 || corpus.dev_size <= 0 || corpus.test_size <= 0)
      throw std::invalid_argument("config: split sizes must be positive");
    if (optimizer_rule != "adam" && optimizer_rule != "sgd")
      throw std::invalid_argument("config: train.optimizer must be adam or sgd");
    if (eval_beam < 1) throw std::invalid_argument("config: eval.beam_size must be >= 1");
    if (embed_dim == 0 || hidden_dim == 0 || disc_embed_dim == 0 || disc_kernels == 0)
      throw std::invalid_argument("config: model dimensions must be positive");
  }

  GeneratorConfig generator_config() const {
    GeneratorConfig g;
    g.vocab_size = corpus.vocab_size;
    g.embed_dim = embed_dim;
    g.hidden_dim = hidden_dim;
    g.t_max = t_max;
    g.init_seed = seed;
    g.optimizer.rule =
        optimizer_rule == "sgd" ? OptimizerConfig::Rule::Sgd : OptimizerConfig::Rule::Adam;
    g.optimizer.lr = train.lr_pretrain;
    return g;
  }

  DiscriminatorConfig discriminator_config() const {
    DiscriminatorConfig d;
    d.vocab_size = corpus.vocab_size;
    d.embed_dim = disc_embed_dim;
    d.kernels_per_window = disc_kernels;
    d.t = t_max;
    d.init_seed = seed;
    d.optimizer.rule =
        optimizer_rule == "sgd" ? OptimizerConfig::Rule::Sgd : OptimizerConfig::Rule::Adam;
    d.optimizer.lr = train.lr_pretrain;
    d.clip_epsilon = train.epsilon;
    return d;
  }
};

namespace config_detail {

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline std::uint64_t parse_u64(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not an integer: " + s);
  return v;
}

inline int parse_int(const std::string& s) {
  std::size_t pos = 0;
  const long v = std::stol(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not an integer: " + s);
  return static_cast<int>(v);
}

inline double parse_f64(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&f](std::string key, auto getter, auto setter) {
      f.push_back({std::move(key), getter, setter});
    };
    add("corpus.kind",
        [](const ExperimentConfig& c) { return to_string(c.corpus.kind); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.kind = task_kind_from(v); });
    add("corpus.vocab_size",
        [](const ExperimentConfig& c) { return std::to_string(c.corpus.vocab_size); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.vocab_size = parse_int(v); });
    add("corpus.len_min",
        [](const ExperimentConfig& c) { return std::to_string(c.corpus.len_min); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.len_min = parse_int(v); });
    add("corpus.len_max",
        [](const ExperimentConfig& c) { return std::to_string(c.corpus.len_max); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.len_max = parse_int(v); });
    add("corpus.train_size",
        [](const ExperimentConfig& c) { return std::to_string(c.corpus.train_size); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.train_size = parse_int(v); });
    add("corpus.dev_size",
        [](const ExperimentConfig& c) { return std::to_string(c.corpus.dev_size); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.dev_size = parse_int(v); });
    add("corpus.test_size",
        [](const ExperimentConfig& c) { return std::to_string(c.corpus.test_size); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.test_size = parse_int(v); });
    add("corpus.seed",
        [](const ExperimentConfig& c) { return std::to_string(c.corpus.seed); },
        [](ExperimentConfig& c, const std::string& v) { c.corpus.seed = parse_u64(v); });
    add("model.embed_dim",
        [](const ExperimentConfig& c) { return std::to_string(c.embed_dim); },
        [](ExperimentConfig& c, const std::string& v) { c.embed_dim = parse_u64(v); });
    add("model.hidden_dim",
        [](const ExperimentConfig& c) { return std::to_string(c.hidden_dim); },
        [](ExperimentConfig& c, const std::string& v) { c.hidden_dim = parse_u64(v); });
    add("model.t_max",
        [](const ExperimentConfig& c) { return std::to_string(c.t_max); },
        [](ExperimentConfig& c, const std::string& v) { c.t_max = parse_u64(v); });
    add("model.disc_embed_dim",
        [](const ExperimentConfig& c) { return std::to_string(c.disc_embed_dim); },
        [](ExperimentConfig& c, const std::string& v) { c.disc_embed_dim = parse_u64(v); });
    add("model.disc_kernels_per_window",
        [](const ExperimentConfig& c) { return std::to_string(c.disc_kernels); },
        [](ExperimentConfig& c, const std::string& v) { c.disc_kernels = parse_u64(v); });
    add("train.lambda",
        [](const ExperimentConfig& c) { return format_double(c.train.lambda); },
        [](ExperimentConfig& c, const std::string& v) { c.train.lambda = parse_f64(v); });
    add("train.baseline",
        [](const ExperimentConfig& c) { return format_double(c.train.baseline); },
        [](ExperimentConfig& c, const std::string& v) { c.train.baseline = parse_f64(v); });
    add("train.rollouts",
        [](const ExperimentConfig& c) { return std::to_string(c.train.rollouts); },
        [](ExperimentConfig& c, const std::string& v) { c.train.rollouts = parse_u64(v); });
    add("train.xi",
        [](const ExperimentConfig& c) { return format_double(c.train.xi); },
        [](ExperimentConfig& c, const std::string& v) { c.train.xi = parse_f64(v); });
    add("train.eta",
        [](const ExperimentConfig& c) { return std::to_string(c.train.eta); },
        [](ExperimentConfig& c, const std::string& v) { c.train.eta = parse_u64(v); });
    add("train.epsilon",
        [](const ExperimentConfig& c) { return format_double(c.train.epsilon); },
        [](ExperimentConfig& c, const std::string& v) { c.train.epsilon = parse_f64(v); });
    add("train.patience",
        [](const ExperimentConfig& c) { return std::to_string(c.train.patience); },
        [](ExperimentConfig& c, const std::string& v) { c.train.patience = parse_u64(v); });
    add("train.eval_interval",
        [](const ExperimentConfig& c) { return std::to_string(c.train.eval_interval); },
        [](ExperimentConfig& c, const std::string& v) { c.train.eval_interval = parse_u64(v); });
    add("train.gen_batch",
        [](const ExperimentConfig& c) { return std::to_string(c.train.gen_batch); },
        [](ExperimentConfig& c, const std::string& v) { c.train.gen_batch = parse_u64(v); });
    add("train.pg_batch",
        [](const ExperimentConfig& c) { return std::to_string(c.train.pg_batch); },
        [](ExperimentConfig& c, const std::string& v) { c.train.pg_batch = parse_u64(v); });
    add("train.disc_batch",
        [](const ExperimentConfig& c) { return std::to_string(c.train.disc_batch); },
        [](ExperimentConfig& c, const std::string& v) { c.train.disc_batch = parse_u64(v); });
    add("train.max_pretrain_steps",
        [](const ExperimentConfig& c) { return std::to_string(c.train.max_pretrain_steps); },
        [](ExperimentConfig& c, const std::string& v) { c.train.max_pretrain_steps = parse_u64(v); });
    add("train.max_adv_steps",
        [](const ExperimentConfig& c) { return std::to_string(c.train.max_adv_steps); },
        [](ExperimentConfig& c, const std::string& v) { c.train.max_adv_steps = parse_u64(v); });
    add("train.disc_pretrain_cap",
        [](const ExperimentConfig& c) { return std::to_string(c.train.disc_pretrain_cap); },
        [](ExperimentConfig& c, const std::string& v) { c.train.disc_pretrain_cap = parse_u64(v); });
    add("train.disc_pool",
        [](const ExperimentConfig& c) { return std::to_string(c.train.disc_pool); },
        [](ExperimentConfig& c, const std::string& v) { c.train.disc_pool = parse_u64(v); });
    add("train.disc_eval_every",
        [](const ExperimentConfig& c) { return std::to_string(c.train.disc_eval_every); },
        [](ExperimentConfig& c, const std::string& v) { c.train.disc_eval_every = parse_u64(v); });
    add("train.lr_pretrain",
        [](const ExperimentConfig& c) { return format_double(c.train.lr_pretrain); },
        [](ExperimentConfig& c, const std::string& v) { c.train.lr_pretrain = parse_f64(v); });
    add("train.lr_adversarial",
        [](const ExperimentConfig& c) { return format_double(c.train.lr_adversarial); },
        [](ExperimentConfig& c, const std::string& v) { c.train.lr_adversarial = parse_f64(v); });
    add("train.mrt_sample_size",
        [](const ExperimentConfig& c) { return std::to_string(c.train.mrt_sample_size); },
        [](ExperimentConfig& c, const std::string& v) { c.train.mrt_sample_size = parse_u64(v); });
    add("train.divergence_guard",
        [](const ExperimentConfig& c) { return format_double(c.train.divergence_guard); },
        [](ExperimentConfig& c, const std::string& v) { c.train.divergence_guard = parse_f64(v); });
    add("train.optimizer",
        [](const ExperimentConfig& c) { return c.optimizer_rule; },
        [](ExperimentConfig& c, const std::string& v) { c.optimizer_rule = v; });
    add("eval.beam_size",
        [](const ExperimentConfig& c) { return std::to_string(c.eval_beam); },
        [](ExperimentConfig& c, const std::string& v) { c.eval_beam = parse_u64(v); });
    add("eval.length_penalty",
        [](const ExperimentConfig& c) { return format_double(c.eval_length_penalty); },
        [](ExperimentConfig& c, const std::string& v) { c.eval_length_penalty = parse_f64(v); });
    add("run.dir",
        [](const ExperimentConfig& c) { return c.run_dir; },
        [](ExperimentConfig& c, const std::string& v) { c.run_dir = v; });
    add("run.seed",
        [](const ExperimentConfig& c) { return std::to_string(c.seed); },
        [](ExperimentConfig& c, const std::string& v) {
          c.seed = parse_u64(v);
          c.train.seed = c.seed;
        });
    return f;
  }();
  return table;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace config_detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  cfg.train.seed = cfg.seed;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = config_detail::trim(t.substr(0, eq));
    const std::string val = config_detail::trim(t.substr(eq + 1));
    bool matched = false;
    for (const auto& f : config_detail::fields()) {
      if (f.key == key) {
        try {
          f.set(cfg, val);
        } catch (const std::exception& e) {
          throw std::invalid_argument("config line " + std::to_string(lineno) + " (" + key +
                                      "): " + e.what());
        }
        matched = true;
        break;
      }
    }
    if (!matched)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("parse_config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

// Canonical rendering: every key, fixed order.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : config_detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline void write_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_config: cannot open " + path);
  os << serialize_config(cfg);
}

}  // namespace brcsgan
