#include "sharpqos/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace sharpqos {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// strips a trailing comment that is not inside quotes
std::string strip_comment(const std::string& s) {
  bool in_quote = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_quote = !in_quote;
    if (s[i] == '#' && !in_quote) return s.substr(0, i);
  }
  return s;
}

std::vector<std::string> split_list(const std::string& inner) {
  std::vector<std::string> out;
  std::string cur;
  bool in_quote = false;
  for (char ch : inner) {
    if (ch == '"') {
      in_quote = !in_quote;
      continue;
    }
    if (ch == ',' && !in_quote) {
      out.push_back(trim(cur));
      cur.clear();
      continue;
    }
    cur += ch;
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cf;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    Value v;
    if (!val.empty() && val.front() == '[') {
      if (val.back() != ']')
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unterminated array");
      v.is_list = true;
      v.list = split_list(val.substr(1, val.size() - 2));
    } else if (!val.empty() && val.front() == '"') {
      if (val.size() < 2 || val.back() != '"')
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unterminated string");
      v.is_string = true;
      v.raw = val.substr(1, val.size() - 2);
    } else {
      v.raw = val;
    }
    cf.sections_[section][key] = std::move(v);
  }
  return cf;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const ConfigFile::Value* ConfigFile::lookup(const std::string& section,
                                            const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  return &k->second;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return lookup(section, key) != nullptr;
}

double ConfigFile::number(const std::string& section, const std::string& key,
                          double fallback) const {
  const Value* v = lookup(section, key);
  if (!v) return fallback;
  return std::stod(v->raw);
}

long ConfigFile::integer(const std::string& section, const std::string& key,
                         long fallback) const {
  const Value* v = lookup(section, key);
  if (!v) return fallback;
  return std::stol(v->raw);
}

bool ConfigFile::boolean(const std::string& section, const std::string& key,
                         bool fallback) const {
  const Value* v = lookup(section, key);
  if (!v) return fallback;
  if (v->raw == "true") return true;
  if (v->raw == "false") return false;
  throw std::runtime_error("config [" + section + "] " + key + ": expected true/false");
}

std::string ConfigFile::str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  const Value* v = lookup(section, key);
  if (!v) return fallback;
  return v->raw;
}

std::vector<std::string> ConfigFile::str_list(const std::string& section,
                                              const std::string& key) const {
  const Value* v = lookup(section, key);
  if (!v) return {};
  if (!v->is_list) throw std::runtime_error("config [" + section + "] " + key + ": expected array");
  return v->list;
}

std::vector<double> ConfigFile::num_list(const std::string& section,
                                         const std::string& key) const {
  std::vector<double> out;
  for (const std::string& s : str_list(section, key)) out.push_back(std::stod(s));
  return out;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  ConfigFile cf = ConfigFile::parse_file(path);
  fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  ExperimentConfig c;
  for (const std::string& p : cf.str_list("dataset", "matrices"))
    c.dataset.matrix_paths.push_back(resolve(p));
  c.dataset.task_names = cf.str_list("dataset", "tasks");
  c.dataset.context_path = resolve(cf.str("dataset", "context", ""));
  c.dataset.archive = resolve(cf.str("dataset", "archive", ""));

  c.split.train_density = cf.number("split", "train_density", 10.0);
  c.split.seed = static_cast<std::uint64_t>(cf.integer("split", "seed", 1));
  c.split.val_fraction = cf.number("split", "val_fraction", 0.05);

  c.features.d1 = static_cast<int>(cf.integer("features", "d1", 128));
  c.features.d2 = static_cast<int>(cf.integer("features", "d2", 128));
  c.features.nmf_iters = static_cast<int>(cf.integer("features", "nmf_iters", 200));
  c.features.ae_epochs = static_cast<int>(cf.integer("features", "ae_epochs", 300));
  c.features.seed = static_cast<std::uint64_t>(cf.integer("features", "seed", 2));

  c.model.d = static_cast<int>(cf.integer("model", "d", 128));
  c.model.layers = static_cast<int>(cf.integer("model", "layers", 2));
  c.model.k1 = static_cast<int>(cf.integer("model", "k1", 4));
  c.model.k2 = static_cast<int>(cf.integer("model", "k2", 4));
  c.model.d_snr = static_cast<int>(cf.integer("model", "d_snr", 64));
  c.model.tau = cf.number("model", "tau", 2.0 / 3.0);
  c.model.gamma = cf.number("model", "gamma", 1.1);
  c.model.beta_stretch = cf.number("model", "beta_stretch", -0.1);
  c.model.delta = cf.number("model", "delta", 0.5);
  c.model.head1 = static_cast<int>(cf.integer("model", "head1", 128));
  c.model.head2 = static_cast<int>(cf.integer("model", "head2", 64));
  c.model.sigma1 = cf.str("model", "sigma1", "relu");
  c.model.sigma2 = cf.str("model", "sigma2", "sigmoid");

  c.train.epochs = static_cast<int>(cf.integer("train", "epochs", 10000));
  c.train.lr = cf.number("train", "lr", 1e-3);
  c.train.weight_decay = cf.number("train", "weight_decay", 1e-4);
  c.train.ema_beta = cf.number("train", "ema_beta", 0.99);
  c.train.lambda_l0 = cf.number("train", "lambda", 1e-5);
  c.train.patience = static_cast<int>(cf.integer("train", "patience", 400));
  c.train.balancing = parse_balancing(cf.str("train", "balancing", "ema"));
  c.train.seed = static_cast<std::uint64_t>(cf.integer("train", "seed", 3));
  c.train.log_every = static_cast<int>(cf.integer("train", "log_every", 0));

  c.eval.groups = static_cast<int>(cf.integer("eval", "groups", 50));
  c.eval.levels.clear();
  std::vector<double> lv = cf.num_list("eval", "levels");
  if (lv.empty())
    c.eval.levels = {90, 95, 99};
  else
    for (double l : lv) c.eval.levels.push_back(static_cast<int>(l));
  c.eval.outlier_fraction = cf.number("eval", "outlier_fraction", 0.0);
  c.eval.cold_start = cf.str("eval", "cold_start", "");
  c.eval.output_dir = resolve(cf.str("eval", "output_dir", "out"));
  c.eval.strict = cf.boolean("eval", "strict", true);

  c.master_seed = static_cast<std::uint64_t>(cf.integer("experiment", "seed", 0));
  if (c.master_seed != 0) c.apply_master_seed(c.master_seed);
  return c;
}

void ExperimentConfig::apply_master_seed(std::uint64_t seed) {
  master_seed = seed;
  split.seed = mix_seed(seed, 1);
  features.seed = mix_seed(seed, 2);
  train.seed = mix_seed(seed, 3);
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "dataset:";
  for (const auto& p : dataset.matrix_paths) os << p << ';';
  for (const auto& t : dataset.task_names) os << t << ';';
  os << dataset.context_path << ';' << dataset.archive;
  os << "|split:" << split.train_density << ',' << split.seed << ',' << split.val_fraction;
  os << "|features:" << features.d1 << ',' << features.d2 << ',' << features.nmf_iters << ','
     << features.ae_epochs << ',' << features.seed;
  os << "|model:" << model.d << ',' << model.layers << ',' << model.k1 << ',' << model.k2 << ','
     << model.d_snr << ',' << model.tau << ',' << model.gamma << ',' << model.beta_stretch << ','
     << model.delta << ',' << model.head1 << ',' << model.head2 << ',' << model.sigma1 << ','
     << model.sigma2;
  os << "|train:" << train.epochs << ',' << train.lr << ',' << train.weight_decay << ','
     << train.ema_beta << ',' << train.lambda_l0 << ',' << train.patience << ','
     << to_string(train.balancing) << ',' << train.seed;
  os << "|eval:" << eval.groups << ',';
  for (int l : eval.levels) os << l << ';';
  os << eval.outlier_fraction << ',' << eval.cold_start << ',' << eval.strict;
  return os.str();
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace sharpqos
