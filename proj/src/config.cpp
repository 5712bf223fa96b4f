#include "fsl/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

namespace fs = std::filesystem;

struct Context {
  RunConfig& config;
  std::size_t line;
  const fs::path& base;
};

using Apply = std::function<void(Context&, const std::string&)>;

struct KeySpec {
  std::string section;
  std::string key;
  std::string type;
  std::string fallback;  // documented default
  std::string help;
  bool required = false;
  Apply apply;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void type_error(const Context& ctx, const std::string& what, const std::string& value) {
  throw ParseError(ParseError::Kind::kType,
                   "line " + std::to_string(ctx.line) + ": expected " + what + ", got '" + value + "'", ctx.line);
}

std::uint64_t as_uint(const Context& ctx, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) type_error(ctx, "a non-negative integer", v);
  errno = 0;
  const auto n = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) type_error(ctx, "an integer in range", v);
  return n;
}

double as_real(const Context& ctx, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d)) type_error(ctx, "a real number", v);
  return d;
}

bool as_bool(const Context& ctx, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  type_error(ctx, "true or false", v);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> as_uint_list(const Context& ctx, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(as_uint(ctx, item));
  return out;
}

template <typename Fn>
auto invalid_value(const Context& ctx, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ParseError(ParseError::Kind::kInvalidValue, "line " + std::to_string(ctx.line) + ": " + e.what(), ctx.line);
  }
}

fs::path as_path(const Context& ctx, const std::string& v) {
  fs::path p(v);
  return p.is_absolute() ? p : ctx.base / p;
}

ExperimentConfig& ex(Context& ctx) { return ctx.config.experiment; }

TriggerSpec& trigger(Context& ctx) {
  auto& t = ex(ctx).attack.trigger;
  if (!t) t.emplace();
  return *t;
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      // [federation]
      {"federation", "workers", "integer", "(required)", "number of workers K", true,
       [](Context& c, const std::string& v) { ex(c).num_workers = as_uint(c, v); }},
      {"federation", "fraction", "real", "1.0", "fraction C of workers selected per round", false,
       [](Context& c, const std::string& v) { ex(c).fraction = as_real(c, v); }},
      {"federation", "rounds", "integer", "(required)", "training rounds T", true,
       [](Context& c, const std::string& v) { ex(c).rounds = as_uint(c, v); }},
      {"federation", "local_epochs", "integer", "3", "local epochs E per round", false,
       [](Context& c, const std::string& v) { ex(c).local_epochs = as_uint(c, v); }},
      {"federation", "batch_size", "integer", "64", "local mini-batch size BS", false,
       [](Context& c, const std::string& v) { ex(c).batch_size = as_uint(c, v); }},
      {"federation", "learning_rate", "real", "0.01", "SGD learning rate eta", false,
       [](Context& c, const std::string& v) { ex(c).learning_rate = as_real(c, v); }},
      {"federation", "momentum", "real", "0.9", "SGD momentum", false,
       [](Context& c, const std::string& v) { ex(c).momentum = as_real(c, v); }},
      {"federation", "seed", "integer", "1", "base seed for every random stream", false,
       [](Context& c, const std::string& v) { ex(c).seed = as_uint(c, v); }},
      {"federation", "report_window", "integer", "10", "summary averages the last N rounds", false,
       [](Context& c, const std::string& v) { ex(c).report_window = as_uint(c, v); }},
      // [model]
      {"model", "hidden", "integer list", "32", "hidden layer widths, comma separated (empty = none)", false,
       [](Context& c, const std::string& v) { ex(c).model.hidden = as_uint_list(c, v); }},
      {"model", "conv", "bool", "false", "prepend a conv(3x3, 8 filters) + 2x2 max-pool front-end", false,
       [](Context& c, const std::string& v) {
         if (as_bool(c, v)) {
           if (!ex(c).model.conv) ex(c).model.conv.emplace();
         } else {
           ex(c).model.conv.reset();
         }
       }},
      {"model", "conv_filters", "integer", "8", "conv front-end filter count", false,
       [](Context& c, const std::string& v) {
         if (!ex(c).model.conv) ex(c).model.conv.emplace();
         ex(c).model.conv->filters = as_uint(c, v);
       }},
      // [data]
      {"data", "source", "mnist | synth", "(required)", "dataset family", true,
       [](Context& c, const std::string& v) {
         if (v == "mnist") {
           ex(c).data.source = DataSource::kMnist;
         } else if (v == "synth") {
           ex(c).data.source = DataSource::kSynth;
         } else {
           type_error(c, "mnist or synth", v);
         }
       }},
      {"data", "train_images", "path", "-", "IDX training images (mnist)", false,
       [](Context& c, const std::string& v) { ex(c).data.train_images = as_path(c, v); }},
      {"data", "train_labels", "path", "-", "IDX training labels (mnist)", false,
       [](Context& c, const std::string& v) { ex(c).data.train_labels = as_path(c, v); }},
      {"data", "test_images", "path", "-", "IDX test images (mnist)", false,
       [](Context& c, const std::string& v) { ex(c).data.test_images = as_path(c, v); }},
      {"data", "test_labels", "path", "-", "IDX test labels (mnist)", false,
       [](Context& c, const std::string& v) { ex(c).data.test_labels = as_path(c, v); }},
      {"data", "max_train", "integer", "0", "keep only the first N training examples (0 = all)", false,
       [](Context& c, const std::string& v) { ex(c).data.max_train = as_uint(c, v); }},
      {"data", "partition", "iid | dirichlet", "iid", "how training data is split across workers", false,
       [](Context& c, const std::string& v) {
         if (v == "iid") {
           ex(c).data.partition = PartitionRegime::kIid;
         } else if (v == "dirichlet") {
           ex(c).data.partition = PartitionRegime::kDirichlet;
         } else {
           type_error(c, "iid or dirichlet", v);
         }
       }},
      {"data", "alpha", "real", "1.0", "Dirichlet concentration", false,
       [](Context& c, const std::string& v) { ex(c).data.alpha = as_real(c, v); }},
      {"data", "synth_classes", "integer", "10", "synthetic blob classes", false,
       [](Context& c, const std::string& v) { ex(c).data.synth_classes = static_cast<int>(as_uint(c, v)); }},
      {"data", "synth_per_class", "integer", "100", "synthetic training examples per class", false,
       [](Context& c, const std::string& v) { ex(c).data.synth_per_class = as_uint(c, v); }},
      {"data", "synth_test_per_class", "integer", "50", "synthetic test examples per class", false,
       [](Context& c, const std::string& v) { ex(c).data.synth_test_per_class = as_uint(c, v); }},
      {"data", "synth_dim", "integer", "32", "synthetic feature dimension", false,
       [](Context& c, const std::string& v) { ex(c).data.synth_dim = as_uint(c, v); }},
      {"data", "synth_spread", "real", "0.15", "standard deviation of each blob", false,
       [](Context& c, const std::string& v) { ex(c).data.synth_spread = as_real(c, v); }},
      // [attack]
      {"attack", "kind", "none | label_flip | backdoor", "none", "poisoning attack", false,
       [](Context& c, const std::string& v) {
         auto& a = ex(c).attack;
         if (v == "none") {
           a.kind = AttackKind::kNone;
         } else if (v == "label_flip") {
           a.kind = AttackKind::kLabelFlip;
         } else if (v == "backdoor") {
           a.kind = AttackKind::kBackdoor;
         } else {
           type_error(c, "none, label_flip or backdoor", v);
         }
       }},
      {"attack", "source_class", "integer", "0", "class the attack targets (c_src)", false,
       [](Context& c, const std::string& v) { ex(c).attack.source_class = static_cast<int>(as_uint(c, v)); }},
      {"attack", "target_class", "integer", "1", "class the attacker wants predicted (c_target)", false,
       [](Context& c, const std::string& v) { ex(c).attack.target_class = static_cast<int>(as_uint(c, v)); }},
      {"attack", "attackers", "integer list", "(empty)", "attacker worker ids", false,
       [](Context& c, const std::string& v) {
         const auto ids = as_uint_list(c, v);
         ex(c).attack.attacker_ids = std::set<std::size_t>(ids.begin(), ids.end());
       }},
      {"attack", "num_attackers", "integer", "0", "shorthand: workers 0..N-1 attack", false,
       [](Context& c, const std::string& v) {
         auto& ids = ex(c).attack.attacker_ids;
         ids.clear();
         for (std::size_t i = 0, n = as_uint(c, v); i < n; ++i) ids.insert(i);
       }},
      {"attack", "poison_fraction", "real", "0.5", "share of an attacker's c_src examples that get the trigger", false,
       [](Context& c, const std::string& v) { ex(c).attack.poison_fraction = as_real(c, v); }},
      {"attack", "start_round", "integer", "0", "first round in which attackers train on poisoned data", false,
       [](Context& c, const std::string& v) { ex(c).attack.start_round = as_uint(c, v); }},
      {"attack", "allow_excess_attackers", "bool", "false", "warn instead of failing when attackers exceed K/5", false,
       [](Context& c, const std::string& v) { ex(c).attack.allow_excess_attackers = as_bool(c, v); }},
      // [attack.trigger]
      {"attack.trigger", "height", "integer", "3", "trigger patch height in pixels", false,
       [](Context& c, const std::string& v) { trigger(c).height = as_uint(c, v); }},
      {"attack.trigger", "width", "integer", "3", "trigger patch width in pixels", false,
       [](Context& c, const std::string& v) { trigger(c).width = as_uint(c, v); }},
      {"attack.trigger", "position", "bottom_right | custom", "bottom_right", "where the patch goes", false,
       [](Context& c, const std::string& v) {
         if (v == "bottom_right") {
           trigger(c).position = TriggerSpec::Position::kBottomRight;
         } else if (v == "custom") {
           trigger(c).position = TriggerSpec::Position::kCustom;
         } else {
           type_error(c, "bottom_right or custom", v);
         }
       }},
      {"attack.trigger", "row", "integer", "0", "top row of a custom patch", false,
       [](Context& c, const std::string& v) { trigger(c).row = as_uint(c, v); }},
      {"attack.trigger", "col", "integer", "0", "left column of a custom patch", false,
       [](Context& c, const std::string& v) { trigger(c).col = as_uint(c, v); }},
      {"attack.trigger", "value", "real", "1.0", "pixel value written into the patch", false,
       [](Context& c, const std::string& v) { trigger(c).value = as_real(c, v); }},
      // [defense]
      {"defense", "kind", "fedavg | median | tmean | mkrum | fgold | fl_defender", "(required)", "aggregation rule", true,
       [](Context& c, const std::string& v) { ex(c).defense.kind = invalid_value(c, [&] { return parse_defense(v); }); }},
      {"defense", "trim_beta", "real", "0.2", "trimmed-mean fraction cut from each end", false,
       [](Context& c, const std::string& v) { ex(c).defense.trim_beta = as_real(c, v); }},
      {"defense", "krum_f", "integer", "ceil(0.2 m)", "Multi-Krum assumed attacker count", false,
       [](Context& c, const std::string& v) { ex(c).defense.krum_f = as_uint(c, v); }},
      {"defense", "krum_select", "integer", "m - f", "Multi-Krum updates averaged", false,
       [](Context& c, const std::string& v) { ex(c).defense.krum_select = as_uint(c, v); }},
      // [output]
      {"output", "dir", "path", "results", "output directory", false,
       [](Context& c, const std::string& v) { c.config.output.dir = as_path(c, v); }},
      {"output", "prefix", "string", "run", "file name prefix", false,
       [](Context& c, const std::string& v) { c.config.output.prefix = v; }},
      {"output", "record_timing", "bool", "true", "write measured aggregation time (false writes 0)", false,
       [](Context& c, const std::string& v) { c.config.output.record_timing = as_bool(c, v); }},
      {"output", "diagnostics", "bool", "false", "emit the feature diagnostics CSV", false,
       [](Context& c, const std::string& v) { c.config.output.diagnostics = as_bool(c, v); }},
      {"output", "diagnostics_round", "integer", "0", "round whose updates the diagnostics analyze", false,
       [](Context& c, const std::string& v) { c.config.output.diagnostics_round = as_uint(c, v); }},
      {"output", "diagnostics_modes", "mode list", "all,last,lastpca,engineered", "feature pipelines to run", false,
       [](Context& c, const std::string& v) {
         auto& modes = c.config.output.diagnostics_modes;
         modes.clear();
         for (const auto& item : split_list(v)) modes.push_back(invalid_value(c, [&] { return parse_feature_mode(item); }));
       }},
  };
  return table;
}

const KeySpec* find_key(const std::string& section, const std::string& key) {
  for (const auto& spec : key_table()) {
    if (spec.section == section && spec.key == key) return &spec;
  }
  return nullptr;
}

bool known_section(const std::string& section) {
  return std::any_of(key_table().begin(), key_table().end(),
                     [&](const KeySpec& s) { return s.section == section; });
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const fs::path& base_dir) {
  RunConfig config;
  std::map<std::string, std::size_t> seen;  // "section.key" -> line
  std::set<std::string> sections_seen;
  std::vector<std::string> canonical;
  std::string section;

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ParseError(ParseError::Kind::kSyntax, "line " + std::to_string(line_no) + ": unterminated section header",
                         line_no);
      }
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) {
        throw ParseError(ParseError::Kind::kUnknownKey,
                         "line " + std::to_string(line_no) + ": unknown section [" + section + "]", line_no);
      }
      sections_seen.insert(section);
      if (section == "attack.trigger" && !config.experiment.attack.trigger) config.experiment.attack.trigger.emplace();
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(ParseError::Kind::kSyntax, "line " + std::to_string(line_no) + ": expected key = value", line_no);
    }
    if (section.empty()) {
      throw ParseError(ParseError::Kind::kSyntax, "line " + std::to_string(line_no) + ": key outside any section",
                       line_no);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const KeySpec* spec = find_key(section, key);
    if (spec == nullptr) {
      throw ParseError(ParseError::Kind::kUnknownKey,
                       "line " + std::to_string(line_no) + ": unknown key '" + key + "' in [" + section + "]", line_no);
    }
    const std::string full = section + "." + key;
    if (const auto it = seen.find(full); it != seen.end()) {
      throw ParseError(ParseError::Kind::kDuplicateKey,
                       "duplicate key '" + full + "' on lines " + std::to_string(it->second) + " and " +
                           std::to_string(line_no),
                       line_no);
    }
    seen.emplace(full, line_no);
    Context ctx{config, line_no, base_dir};
    spec->apply(ctx, value);
    canonical.push_back(full + "=" + value);
  }

  for (const auto& spec : key_table()) {
    if (spec.required && !seen.contains(spec.section + "." + spec.key)) {
      throw ParseError(ParseError::Kind::kMissingKey, "missing required key '" + spec.section + "." + spec.key + "'");
    }
  }
  if (seen.contains("attack.attackers") && seen.contains("attack.num_attackers")) {
    throw ParseError(ParseError::Kind::kInvalidValue, "attack.attackers and attack.num_attackers are exclusive",
                     seen.at("attack.num_attackers"));
  }
  const auto& ex = config.experiment;
  if (ex.attack.kind == AttackKind::kBackdoor && !sections_seen.contains("attack.trigger")) {
    throw ParseError(ParseError::Kind::kMissingKey, "trigger required: backdoor attack without an [attack.trigger] section",
                     seen.at("attack.kind"));
  }
  if (ex.data.source == DataSource::kMnist) {
    for (const char* key : {"train_images", "train_labels", "test_images", "test_labels"}) {
      if (!seen.contains(std::string("data.") + key)) {
        throw ParseError(ParseError::Kind::kMissingKey, std::string("missing required key 'data.") + key + "' for mnist");
      }
    }
  }

  std::sort(canonical.begin(), canonical.end());
  for (const auto& entry : canonical) config.canonical += entry + "\n";
  return config;
}

RunConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseError::Kind::kUnreadable, "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::string config_reference() {
  std::ostringstream out;
  out << "# Configuration reference\n\n"
      << "Generated by `fsl reference`. Files are sectioned `key = value` text; `#` starts a comment.\n"
      << "Unknown sections or keys, duplicate keys and malformed values are errors that name the line.\n"
      << "Relative paths resolve against the directory holding the config file.\n";
  std::string current;
  for (const auto& spec : key_table()) {
    if (spec.section != current) {
      current = spec.section;
      out << "\n## [" << current << "]\n\n| key | type | default | meaning |\n|---|---|---|---|\n";
    }
    out << "| `" << spec.key << "` | " << spec.type << " | " << spec.fallback << " | " << spec.help << " |\n";
  }
  out << "\nA backdoor attack (`attack.kind = backdoor`) requires an `[attack.trigger]` section, even an empty one.\n";
  return out.str();
}

}  // namespace fsl
