#include "nat/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "nat/synth.hpp"

namespace nat::cli {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw InputError("bad value '" + text + "' for " + key);
  return value;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(T RunConfig::*member, const std::string& key) {
  return {[member, key](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

Field text(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> kFields = {
      {"data", text(&RunConfig::data)},
      {"format", text(&RunConfig::format)},
      {"synth_events", number(&RunConfig::synth_events, "synth_events")},
      {"M1", number(&RunConfig::M1, "M1")},
      {"M2", number(&RunConfig::M2, "M2")},
      {"F", number(&RunConfig::F, "F")},
      {"d0", number(&RunConfig::d0, "d0")},
      {"alpha", number(&RunConfig::alpha, "alpha")},
      {"q", number(&RunConfig::q, "q")},
      {"K", number(&RunConfig::K, "K")},
      {"d_t", number(&RunConfig::d_t, "d_t")},
      {"hidden", number(&RunConfig::hidden, "hidden")},
      {"batch_size", number(&RunConfig::batch_size, "batch_size")},
      {"eval_batch_size", number(&RunConfig::eval_batch_size, "eval_batch_size")},
      {"lr", number(&RunConfig::lr, "lr")},
      {"epochs", number(&RunConfig::epochs, "epochs")},
      {"patience", number(&RunConfig::patience, "patience")},
      {"min_delta", number(&RunConfig::min_delta, "min_delta")},
      {"seed", number(&RunConfig::seed, "seed")},
      {"ablations", text(&RunConfig::ablations)},
      {"train_frac", number(&RunConfig::train_frac, "train_frac")},
      {"val_frac", number(&RunConfig::val_frac, "val_frac")},
      {"mask_p", number(&RunConfig::mask_p, "mask_p")},
      {"eval_seeds", number(&RunConfig::eval_seeds, "eval_seeds")},
      {"threads", number(&RunConfig::threads, "threads")},
      {"out_dir", text(&RunConfig::out_dir)},
  };
  return kFields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, value);
      return;
    }
  }
  throw InputError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, field] : fields()) out.emplace_back(name, field.get(*this));
  return out;
}

void RunConfig::validate() const {
  if (format != "auto" && format != "jodie" && format != "edges") {
    throw InputError("format must be auto, jodie or edges");
  }
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || train_frac + val_frac >= 1.0) {
    throw InputError("split fractions must be positive and leave room for a test segment");
  }
  if (mask_p < 0.0 || mask_p > 1.0) throw InputError("mask_p must lie in [0, 1]");
  if (eval_seeds == 0) throw InputError("eval_seeds must be at least 1");
  neural::Ablations::parse(ablations);
  cache_config(1).validate();
  model_config(0).validate();
  train_config().validate();
}

std::vector<std::string> RunConfig::warnings() const {
  std::vector<std::string> out;
  if (M1 > 40) out.push_back("M1=" + std::to_string(M1) + " is outside the usual range [0, 40]");
  if (M2 > 40) out.push_back("M2=" + std::to_string(M2) + " is outside the usual range [0, 40]");
  if (F < 2 || F > 8) out.push_back("F=" + std::to_string(F) + " is outside the usual range [2, 8]");
  return out;
}

cache::CacheConfig RunConfig::cache_config(std::size_t num_nodes) const {
  cache::CacheConfig c;
  c.num_nodes = num_nodes;
  c.M1 = M1;
  c.M2 = M2;
  c.F = F;
  c.d0 = d0;
  c.alpha = alpha;
  c.q = q;
  c.K = neural::Ablations::parse(ablations).hop_limit(K);
  c.seed = seed;
  return c;
}

neural::ModelConfig RunConfig::model_config(std::size_t d_e) const {
  neural::ModelConfig m;
  m.d0 = d0;
  m.F = F;
  m.d_e = d_e;
  m.d_t = d_t;
  m.hidden = hidden;
  m.K = K;
  m.ablations = neural::Ablations::parse(ablations);
  return m;
}

neural::TrainConfig RunConfig::train_config() const {
  neural::TrainConfig t;
  t.batch_size = batch_size;
  t.eval_batch_size = eval_batch_size;
  t.lr = lr;
  t.epochs_max = epochs;
  t.patience = patience;
  t.min_delta = min_delta;
  t.seed = seed;
  return t;
}

void apply_config_text(RunConfig& cfg, const std::string& body) {
  std::istringstream in(body);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream body;
  body << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, body.str());
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InputError("override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.entries()) out += k + "=" + v + "\n";
  return out;
}

graph::Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.empty()) throw InputError("no dataset given");
  if (cfg.data.rfind("synth:", 0) == 0) {
    return synth::generate(cfg.data.substr(6), cfg.synth_events, cfg.seed);
  }
  const std::filesystem::path path(cfg.data);
  std::string format = cfg.format;
  if (format == "auto") format = path.extension() == ".csv" ? "jodie" : "edges";
  return format == "jodie" ? graph::load_jodie_csv(path) : graph::load_edge_list(path);
}

}  // namespace nat::cli
