#include "peftsearch/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace peftsearch {

std::string format_double(double x) {
  char buf[40];
  // shortest representation that round-trips exactly; '.' decimal regardless of locale
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, p);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

namespace {

long parse_long(const std::string& key, const std::string& s) {
  long out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("config: bad integer for " + key + ": " + s);
  return out;
}

double parse_dbl(const std::string& key, const std::string& s) {
  double out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("config: bad number for " + key + ": " + s);
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::map<std::string, std::string> flat_pairs(const RunConfig& c) {
  std::map<std::string, std::string> m;
  m["backbone.num_layers"] = std::to_string(c.backbone.num_layers);
  m["backbone.model_dim"] = std::to_string(c.backbone.model_dim);
  m["backbone.ffn_dim"] = std::to_string(c.backbone.ffn_dim);
  m["backbone.num_heads"] = std::to_string(c.backbone.num_heads);
  m["backbone.vocab_size"] = std::to_string(c.backbone.vocab_size);
  m["backbone.max_seq_len"] = std::to_string(c.backbone.max_seq_len);
  m["backbone.num_classes"] = std::to_string(c.backbone.num_classes);
  m["task.kind"] = to_string(c.task.kind);
  m["task.vocab_size"] = std::to_string(c.task.vocab_size);
  m["task.seq_len"] = std::to_string(c.task.seq_len);
  m["task.num_classes"] = std::to_string(c.task.num_classes);
  m["task.num_train"] = std::to_string(c.task.num_train);
  m["task.num_val"] = std::to_string(c.task.num_val);
  m["task.num_test"] = std::to_string(c.task.num_test);
  m["task.seed"] = std::to_string(c.task.seed);
  std::string kinds;
  for (size_t i = 0; i < c.space.kinds.size(); ++i)
    kinds += (i ? "," : "") + to_string(c.space.kinds[i]);
  m["space.kinds"] = kinds;
  std::string dims;
  for (size_t i = 0; i < c.space.dims.size(); ++i)
    dims += (i ? std::string(",") : std::string()) + std::to_string(c.space.dims[i]);
  m["space.dims"] = dims;
  m["space.adapter_nonlinearity"] = c.space.adapter_nonlinearity ? "true" : "false";
  m["search.budget_ratio"] = format_double(c.budget.budget_ratio);
  m["search.max_triggers"] = std::to_string(c.budget.Z);
  m["search.tau"] = format_double(c.budget.tau);
  m["search.window"] = std::to_string(c.budget.H);
  m["search.gamma"] = format_double(c.budget.gamma);
  m["search.steps"] = std::to_string(c.budget.T);
  m["search.lr_weights"] = format_double(c.budget.lr_weights);
  m["search.lr_arch"] = format_double(c.budget.lr_arch);
  m["search.batch_size"] = std::to_string(c.budget.batch_size);
  m["search.temperature"] = format_double(c.budget.temperature);
  m["search.seed"] = std::to_string(c.budget.seed);
  m["search.mode"] = to_string(c.budget.mode);
  m["pretrain.steps"] = std::to_string(c.pretrain_steps);
  m["retrain.steps"] = std::to_string(c.retrain_steps);
  return m;
}

void apply_pair(RunConfig& c, const std::string& key, const std::string& val) {
  auto as_int = [&] { return static_cast<int>(parse_long(key, val)); };
  auto as_u64 = [&] { return static_cast<uint64_t>(parse_long(key, val)); };
  if (key == "backbone.num_layers") c.backbone.num_layers = as_int();
  else if (key == "backbone.model_dim") c.backbone.model_dim = as_int();
  else if (key == "backbone.ffn_dim") c.backbone.ffn_dim = as_int();
  else if (key == "backbone.num_heads") c.backbone.num_heads = as_int();
  else if (key == "backbone.vocab_size") c.backbone.vocab_size = as_int();
  else if (key == "backbone.max_seq_len") c.backbone.max_seq_len = as_int();
  else if (key == "backbone.num_classes") c.backbone.num_classes = as_int();
  else if (key == "task.kind") c.task.kind = task_kind_from_string(val);
  else if (key == "task.vocab_size") c.task.vocab_size = as_int();
  else if (key == "task.seq_len") c.task.seq_len = as_int();
  else if (key == "task.num_classes") c.task.num_classes = as_int();
  else if (key == "task.num_train") c.task.num_train = as_int();
  else if (key == "task.num_val") c.task.num_val = as_int();
  else if (key == "task.num_test") c.task.num_test = as_int();
  else if (key == "task.seed") c.task.seed = as_u64();
  else if (key == "space.kinds") {
    c.space.kinds.clear();
    for (const auto& p : split_list(val)) c.space.kinds.push_back(module_kind_from_string(trim(p)));
  } else if (key == "space.dims") {
    c.space.dims.clear();
    for (const auto& p : split_list(val)) c.space.dims.push_back(static_cast<int>(parse_long(key, trim(p))));
  } else if (key == "space.adapter_nonlinearity") {
    if (val == "true") c.space.adapter_nonlinearity = true;
    else if (val == "false") c.space.adapter_nonlinearity = false;
    else throw std::invalid_argument("config: bad bool for " + key + ": " + val);
  }
  else if (key == "search.budget_ratio") c.budget.budget_ratio = parse_dbl(key, val);
  else if (key == "search.max_triggers") c.budget.Z = as_int();
  else if (key == "search.tau") c.budget.tau = parse_dbl(key, val);
  else if (key == "search.window") c.budget.H = as_int();
  else if (key == "search.gamma") c.budget.gamma = parse_dbl(key, val);
  else if (key == "search.steps") c.budget.T = as_int();
  else if (key == "search.lr_weights") c.budget.lr_weights = parse_dbl(key, val);
  else if (key == "search.lr_arch") c.budget.lr_arch = parse_dbl(key, val);
  else if (key == "search.batch_size") c.budget.batch_size = as_int();
  else if (key == "search.temperature") c.budget.temperature = parse_dbl(key, val);
  else if (key == "search.seed") c.budget.seed = as_u64();
  else if (key == "search.mode") c.budget.mode = search_mode_from_string(val);
  else if (key == "pretrain.steps") c.pretrain_steps = as_int();
  else if (key == "retrain.steps") c.retrain_steps = as_int();
  else throw std::invalid_argument("config: unknown key: " + key);
}

uint64_t fnv1a(uint64_t h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  budget.validate();
  if (pretrain_steps < 0 || retrain_steps < 0)
    throw std::invalid_argument("config: step counts must be non-negative");
  if (space.dims.empty()) throw std::invalid_argument("config: space.dims must be non-empty");
  for (size_t i = 1; i < space.dims.size(); ++i)
    if (space.dims[i] <= space.dims[i - 1])
      throw std::invalid_argument("config: space.dims must be strictly increasing");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value");
    apply_pair(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : flat_pairs(cfg)) out += k + "=" + v + "\n";
  return out;
}

uint64_t config_hash(const RunConfig& cfg) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [k, v] : flat_pairs(cfg)) {
    h = fnv1a(h, k);
    h = fnv1a(h, "=");
    h = fnv1a(h, v);
    h = fnv1a(h, "\n");
  }
  return h;
}

std::string render_architecture(const SearchedArchitecture& arch) {
  std::string out = "peft-arch v1\n";
  out += "config_hash=" + std::to_string(arch.config_hash) + "\n";
  out += "seed=" + std::to_string(arch.seed) + "\n";
  out += "dims=";
  for (size_t i = 0; i < arch.dims.size(); ++i)
    out += (i ? std::string(",") : std::string()) + std::to_string(arch.dims[i]);
  out += "\n";
  out += "sites=" + std::to_string(arch.sites.size()) + "\n";
  for (const auto& s : arch.sites) {
    out += s.kind + " " + s.position + " " + (s.kept ? "keep" : "drop");
    if (s.kept) out += " dim=" + std::to_string(s.dim) + " params=" + std::to_string(s.params);
    out += "\n";
  }
  out += "total_params=" + std::to_string(arch.total_params) + "\n";
  return out;
}

SearchedArchitecture parse_architecture(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw std::invalid_argument(std::string("architecture: missing ") + what);
    return trim(line);
  };
  if (next("header") != "peft-arch v1")
    throw std::invalid_argument("architecture: unsupported schema version: " + line);

  SearchedArchitecture arch;
  auto field = [&](const char* name) {
    const std::string t = next(name);
    const std::string prefix = std::string(name) + "=";
    if (t.rfind(prefix, 0) != 0)
      throw std::invalid_argument("architecture: expected " + prefix + "..., got: " + t);
    return t.substr(prefix.size());
  };
  arch.config_hash = static_cast<uint64_t>(parse_long("config_hash", field("config_hash")));
  arch.seed = static_cast<uint64_t>(parse_long("seed", field("seed")));
  for (const auto& p : split_list(field("dims")))
    arch.dims.push_back(static_cast<int>(parse_long("dims", trim(p))));
  if (arch.dims.empty()) throw std::invalid_argument("architecture: empty dim list");
  const long n = parse_long("sites", field("sites"));

  long total = 0;
  for (long i = 0; i < n; ++i) {
    std::istringstream ls(next("site line"));
    ArchSiteRecord rec;
    std::string state;
    ls >> rec.kind >> rec.position >> state;
    module_kind_from_string(rec.kind);  // validates
    if (state == "keep") {
      rec.kept = true;
      std::string dims, params;
      ls >> dims >> params;
      if (dims.rfind("dim=", 0) != 0 || params.rfind("params=", 0) != 0)
        throw std::invalid_argument("architecture: malformed kept-site line: " + line);
      rec.dim = static_cast<int>(parse_long("dim", dims.substr(4)));
      rec.params = parse_long("params", params.substr(7));
      if (std::find(arch.dims.begin(), arch.dims.end(), rec.dim) == arch.dims.end())
        throw std::invalid_argument("architecture: dim " + std::to_string(rec.dim) +
                                    " not in the candidate dim list");
      total += rec.params;
    } else if (state != "drop") {
      throw std::invalid_argument("architecture: bad site state: " + state);
    }
    arch.sites.push_back(std::move(rec));
  }
  arch.total_params = parse_long("total_params", field("total_params"));
  if (arch.total_params != total)
    throw std::invalid_argument("architecture: total_params does not match the site sum");
  return arch;
}

void export_architecture(const SearchedArchitecture& arch, const std::string& path) {
  write_file_atomic(path, render_architecture(arch));
}

SearchedArchitecture import_architecture(const std::string& path) {
  return parse_architecture(read_file(path));
}

std::string render_step_csv(const SearchTrace& trace) {
  std::string out = "step,train_loss,val_loss,beta,expected_params\n";
  for (const auto& s : trace.steps) {
    out += std::to_string(s.step) + "," + format_double(s.train_loss) + "," +
           format_double(s.val_loss) + "," + format_double(s.beta) + "," +
           format_double(s.expected_params) + "\n";
  }
  return out;
}

std::string render_trigger_csv(const SearchTrace& trace) {
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
    return s;
  };
  std::string out = "z,step,reduction_target,removed,fix_count,fixed\n";
  for (const auto& t : trace.triggers) {
    out += std::to_string(t.z) + "," + std::to_string(t.step) + "," +
           format_double(t.reduction_target) + "," + join(t.removed) + "," +
           std::to_string(t.fix_count) + "," + join(t.fixed) + "\n";
  }
  return out;
}

void emit_trace(const SearchTrace& trace, const std::string& step_path,
                const std::string& trigger_path) {
  write_file_atomic(step_path, render_step_csv(trace));
  write_file_atomic(trigger_path, render_trigger_csv(trace));
}

}  // namespace peftsearch
