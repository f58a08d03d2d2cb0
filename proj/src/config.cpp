#include "icce/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "icce/error.hpp"

namespace icce {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string_view origin) {
  KeyValueConfig kv;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(fmt::format("{}:{}: unterminated section header", origin, line_no));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected key = value", origin, line_no));
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, line_no));
    kv.set(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void KeyValueConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  const auto key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override has an empty key");
  set(key, trim(assignment.substr(eq + 1)));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

double parse_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("'" + key + "': expected a number, got '" + value + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("'" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("'" + key + "': expected a boolean, got '" + value + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw ConfigError("'" + key + "': empty list");
  return out;
}

bool apply_train_setting(TrainConfig& c, const std::string& key, const std::string& v) {
  auto u = [&](std::size_t& f) { f = parse_uint(key, v); };
  auto d = [&](double& f) { f = parse_double(key, v); };
  if (key == "num_heads") u(c.num_heads);
  else if (key == "num_clusters") u(c.num_clusters);
  else if (key == "tau_student") d(c.tau_student);
  else if (key == "tau_teacher") d(c.tau_teacher);
  else if (key == "beta") d(c.beta);
  else if (key == "lambda_max") d(c.lambda_max);
  else if (key == "teacher_momentum") d(c.teacher_momentum);
  else if (key == "sk_iters") u(c.sk_iters);
  else if (key == "epochs") u(c.epochs);
  else if (key == "warmup_epochs") u(c.warmup_epochs);
  else if (key == "batch_size") u(c.batch_size);
  else if (key == "lr") d(c.lr);
  else if (key == "weight_decay") d(c.weight_decay);
  else if (key == "adam_beta1") d(c.adam_beta1);
  else if (key == "adam_beta2") d(c.adam_beta2);
  else if (key == "adam_eps") d(c.adam_eps);
  else if (key == "marginal_momentum") d(c.marginal_momentum);
  else if (key == "smoothing_m") u(c.smoothing_m);
  else if (key == "seed") c.seed = parse_uint(key, v);
  else if (key == "threads") u(c.threads);
  else return false;
  return true;
}

std::string train_config_to_text(const TrainConfig& c) {
  std::string s;
  auto line = [&s](std::string_view k, const std::string& v) {
    s += fmt::format("{}={}\n", k, v);
  };
  line("num_heads", std::to_string(c.num_heads));
  line("num_clusters", std::to_string(c.num_clusters));
  line("tau_student", fmt_double(c.tau_student));
  line("tau_teacher", fmt_double(c.tau_teacher));
  line("beta", fmt_double(c.beta));
  line("lambda_max", fmt_double(c.lambda_max));
  line("teacher_momentum", fmt_double(c.teacher_momentum));
  line("sk_iters", std::to_string(c.sk_iters));
  line("epochs", std::to_string(c.epochs));
  line("warmup_epochs", std::to_string(c.warmup_epochs));
  line("batch_size", std::to_string(c.batch_size));
  line("lr", fmt_double(c.lr));
  line("weight_decay", fmt_double(c.weight_decay));
  line("adam_beta1", fmt_double(c.adam_beta1));
  line("adam_beta2", fmt_double(c.adam_beta2));
  line("adam_eps", fmt_double(c.adam_eps));
  line("marginal_momentum", fmt_double(c.marginal_momentum));
  line("smoothing_m", std::to_string(c.smoothing_m));
  line("seed", std::to_string(c.seed));
  return s;
}

TrainConfig train_config_from_text(std::string_view text) {
  TrainConfig c;
  const auto kv = KeyValueConfig::parse(text, "<config echo>");
  for (const auto& [k, v] : kv.entries()) {
    if (!apply_train_setting(c, k, v)) throw LoadError("config echo: unknown key '" + k + "'");
  }
  return c;
}

bool apply_selftrain_setting(SelfTrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "steps") c.steps = parse_uint(key, v);
  else if (key == "batch_size") c.batch_size = parse_uint(key, v);
  else if (key == "lrs" || key == "lr") c.lrs = parse_double_list(key, v);
  else if (key == "momentum") c.momentum = parse_double(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
  else if (key == "seed") c.seed = parse_uint(key, v);
  else return false;
  return true;
}

PipelineConfig PipelineConfig::from(const KeyValueConfig& kv,
                                    const std::vector<std::string>& ignore_sections) {
  PipelineConfig p;
  if (auto s = kv.get("run.seed")) {
    p.seed = parse_uint("run.seed", *s);
  }
  if (auto t = kv.get("run.threads")) {
    p.threads = parse_uint("run.threads", *t);
  }
  p.heads.seed = p.seed;
  p.heads.threads = p.threads;
  p.selftrain.seed = p.seed;

  for (const auto& [key, value] : kv.entries()) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    bool ok = true;
    if (std::find(ignore_sections.begin(), ignore_sections.end(), section) !=
        ignore_sections.end()) {
      continue;
    }
    if (section == "run") {
      ok = name == "seed" || name == "threads";
    } else if (section == "data") {
      if (name == "features") p.features = value;
      else if (name == "format") p.features_format = parse_feature_format(value);
      else if (name == "labels") p.labels = value.empty() ? std::nullopt : std::optional<std::filesystem::path>(value);
      else if (name == "output_dir") p.output_dir = value;
      else ok = false;
    } else if (section == "neighbors") {
      if (name == "theta") p.theta = parse_double(key, value);
      else if (name == "k_min") p.k_min = parse_uint(key, value);
      else if (name == "source") {
        if (value == "adaptive") p.neighbor_source = NeighborSource::adaptive;
        else if (value == "ground_truth") p.neighbor_source = NeighborSource::ground_truth;
        else throw ConfigError("'" + key + "': expected adaptive or ground_truth");
      } else if (name == "space") {
        if (value == "raw") p.neighbor_space = NeighborSpace::raw;
        else if (value == "standardized") p.neighbor_space = NeighborSpace::standardized;
        else throw ConfigError("'" + key + "': expected raw or standardized");
      } else ok = false;
    } else if (section == "heads") {
      ok = apply_train_setting(p.heads, name, value);
    } else if (section == "ensemble") {
      if (name == "k") p.ensemble_k = parse_uint(key, value);
      else ok = false;
    } else if (section == "selftrain") {
      ok = apply_selftrain_setting(p.selftrain, name, value);
    } else if (section == "metrics") {
      if (name == "enabled") p.metrics = parse_bool(key, value);
      else ok = false;
    } else {
      ok = false;
    }
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }
  return p;
}

void PipelineConfig::validate() const {
  if (features.empty()) throw ConfigError("data.features is required");
  if (!std::filesystem::exists(features)) {
    throw ConfigError("feature file " + features.string() + " does not exist");
  }
  if (labels && !std::filesystem::exists(*labels)) {
    throw ConfigError("label file " + labels->string() + " does not exist");
  }
  if (neighbor_source == NeighborSource::ground_truth && !labels) {
    throw ConfigError("neighbors.source = ground_truth needs data.labels");
  }
  if (k_min < 1) throw ConfigError("neighbors.k_min must be >= 1");
  heads.validate();
  selftrain.validate();
  if (target_k() < 2) throw ConfigError("ensemble.k must be >= 2");
}

std::string PipelineConfig::to_text() const {
  std::string s;
  s += "[data]\n";
  s += "features=" + features.string() + "\n";
  if (features_format) {
    const char* names[] = {"featpack", "csv", "npy"};
    s += std::string("format=") + names[static_cast<int>(*features_format)] + "\n";
  }
  s += "labels=" + (labels ? labels->string() : std::string()) + "\n";
  s += "output_dir=" + output_dir.string() + "\n";
  s += fmt::format("[run]\nseed={}\nthreads={}\n", seed, threads);
  s += fmt::format("[neighbors]\ntheta={}\nk_min={}\nsource={}\nspace={}\n", theta, k_min,
                   neighbor_source == NeighborSource::adaptive ? "adaptive" : "ground_truth",
                   neighbor_space == NeighborSpace::raw ? "raw" : "standardized");
  s += "[heads]\n" + train_config_to_text(heads);
  s += fmt::format("[ensemble]\nk={}\n", target_k());
  s += fmt::format("[selftrain]\nsteps={}\nbatch_size={}\nlrs={}\nmomentum={}\nweight_decay={}\nseed={}\n",
                   selftrain.steps, selftrain.batch_size, fmt::join(selftrain.lrs, ","),
                   selftrain.momentum, selftrain.weight_decay, selftrain.seed);
  s += fmt::format("[metrics]\nenabled={}\n", metrics ? "true" : "false");
  return s;
}

}  // namespace icce
