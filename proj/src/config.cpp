#include "fbbs/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "fbbs/errors.hpp"

namespace fbbs {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                    std::string(expected));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text, std::string_view expected) {
  text = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) bad_value(key, text, expected);
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  bad_value(key, text, "boolean");
}

std::vector<std::string_view> split_list(std::string_view text) {
  text = trim(text);
  if (!text.empty() && (text.front() == '{' || text.front() == '[')) text.remove_prefix(1);
  if (!text.empty() && (text.back() == '}' || text.back() == ']')) text.remove_suffix(1);
  std::vector<std::string_view> items;
  if (trim(text).empty()) return items;
  for (std::size_t start = 0;;) {
    const auto comma = text.find(',', start);
    items.push_back(trim(text.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return items;
}

bool is_none(std::string_view text) {
  text = trim(text);
  return text == "none" || text == "noiseless";
}

struct Binding {
  std::function<void(AppConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const AppConfig&)> get;
};

template <typename T>
std::string show(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
std::string show_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + show(v[i]);
  return out;
}

std::string show_optional(const std::optional<double>& v) { return v ? show(*v) : "none"; }

template <typename T, typename Member>
Binding number(Member member) {
  return {[member](AppConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_number<T>(k, v, std::is_floating_point_v<T> ? "real" : "integer");
          },
          [member](const AppConfig& c) { return show(std::invoke(member, c)); }};
}

template <typename T, typename Member>
Binding list(Member member) {
  return {[member](AppConfig& c, std::string_view k, std::string_view v) {
            std::vector<T> out;
            for (auto item : split_list(v))
              out.push_back(parse_number<T>(k, item, std::is_floating_point_v<T> ? "list of reals" : "list of integers"));
            std::invoke(member, c) = std::move(out);
          },
          [member](const AppConfig& c) { return show_list(std::invoke(member, c)); }};
}

template <typename Member>
Binding optional_real(Member member) {
  return {[member](AppConfig& c, std::string_view k, std::string_view v) {
            if (is_none(v))
              std::invoke(member, c).reset();
            else
              std::invoke(member, c) = parse_number<double>(k, v, "real or none");
          },
          [member](const AppConfig& c) { return show_optional(std::invoke(member, c)); }};
}

template <typename Member>
Binding flag(Member member) {
  return {[member](AppConfig& c, std::string_view k, std::string_view v) { std::invoke(member, c) = parse_bool(k, v); },
          [member](const AppConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

template <typename Member>
Binding text(Member member) {
  return {[member](AppConfig& c, std::string_view, std::string_view v) { std::invoke(member, c) = std::string(trim(v)); },
          [member](const AppConfig& c) { return std::invoke(member, c); }};
}

template <typename Member>
Binding text_list(Member member) {
  return {[member](AppConfig& c, std::string_view, std::string_view v) {
            std::vector<std::string> out;
            for (auto item : split_list(v)) out.emplace_back(item);
            std::invoke(member, c) = std::move(out);
          },
          [member](const AppConfig& c) {
            std::string out;
            for (const auto& s : std::invoke(member, c)) out += (out.empty() ? "" : ", ") + s;
            return out;
          }};
}

#define FIELD(path) [](auto& c) -> auto& { return c.path; }

const std::map<std::string, Binding, std::less<>>& registry() {
  static const std::map<std::string, Binding, std::less<>> keys = {
      // site
      {"site_seed", number<std::uint64_t>(FIELD(site.seed))},
      {"n_antennas", number<int>(FIELD(site.n_antennas))},
      {"n_paths", number<int>(FIELD(site.n_paths))},
      {"n_scatterers", number<int>(FIELD(site.n_scatterers))},
      {"los_probability", number<double>(FIELD(site.los_probability))},
      {"pathloss_exponent", number<double>(FIELD(site.pathloss_exponent))},
      {"path_decay", number<double>(FIELD(site.path_decay))},
      {"scatter_ref_distance", number<double>(FIELD(site.scatter_ref_distance))},
      {"spacing_ratio", number<double>(FIELD(site.spacing_ratio))},
      {"area_x_min", number<double>(FIELD(site.area.x_min))},
      {"area_x_max", number<double>(FIELD(site.area.x_max))},
      {"area_y_min", number<double>(FIELD(site.area.y_min))},
      {"area_y_max", number<double>(FIELD(site.area.y_max))},
      // dataset
      {"n_users", number<std::size_t>(FIELD(data.n_users))},
      {"train_fraction", number<double>(FIELD(data.train_fraction))},
      {"data_seed", number<std::uint64_t>(FIELD(data.seed))},
      // model
      {"embed_dim", number<int>(FIELD(model.embed_dim))},
      {"n_blocks", number<int>(FIELD(model.n_blocks))},
      {"n_heads", number<int>(FIELD(model.n_heads))},
      {"ffn_multiplier", number<double>(FIELD(model.ffn_multiplier))},
      {"cond_dim", number<int>(FIELD(model.cond_dim))},
      // training
      {"max_epochs", number<int>(FIELD(train.max_epochs))},
      {"stage1_epochs", number<int>(FIELD(train.stage1_epochs))},
      {"batch_size", number<int>(FIELD(train.batch_size))},
      {"learning_rate", number<double>(FIELD(train.learning_rate))},
      {"weight_decay", number<double>(FIELD(train.weight_decay))},
      {"p", number<double>(FIELD(train.p))},
      {"p_full", number<double>(FIELD(train.p_full))},
      {"budget_set", list<int>(FIELD(train.budget_set))},
      {"dense_budget_set", list<int>(FIELD(dense_budget_set))},
      {"ema_decay", number<double>(FIELD(train.ema_decay))},
      {"train_method", text(FIELD(train_method))},
      {"budget_regime", text(FIELD(budget_regime))},
      {"train_seed", number<std::uint64_t>(FIELD(train.seed))},
      // inference
      {"steps", number<int>(FIELD(infer.steps))},
      {"brainstorm", number<int>(FIELD(infer.brainstorm))},
      {"probe_budget", number<int>(FIELD(infer.probe_budget))},
      {"infer_seed", number<std::uint64_t>(FIELD(infer.seed))},
      {"use_ema", flag(FIELD(infer.use_ema))},
      {"selection_noise_snr_db", optional_real(FIELD(infer.selection_noise_snr_db))},
      // evaluation
      {"eval_methods", text_list(FIELD(eval.methods))},
      {"eval_budgets", list<int>(FIELD(eval.sweep.budgets))},
      {"eval_brainstorms", list<int>(FIELD(eval.sweep.brainstorms))},
      {"eval_steps", list<int>(FIELD(eval.sweep.steps))},
      {"eval_snr_db",
       {[](AppConfig& c, std::string_view k, std::string_view v) {
          std::vector<std::optional<double>> out;
          for (auto item : split_list(v))
            out.push_back(is_none(item) ? std::nullopt : std::optional(parse_number<double>(k, item, "list of reals")));
          c.eval.sweep.snr_db = std::move(out);
        },
        [](const AppConfig& c) {
          std::string out;
          for (const auto& s : c.eval.sweep.snr_db) out += (out.empty() ? "" : ", ") + show_optional(s);
          return out;
        }}},
      {"n_test_users", number<std::size_t>(FIELD(eval.sweep.n_test_users))},
      {"eval_seed", number<std::uint64_t>(FIELD(eval.sweep.seed))},
      {"eval_use_ema", flag(FIELD(eval.use_ema))},
      {"eval_selection_noise_snr_db", optional_real(FIELD(eval.selection_noise_snr_db))},
      {"noise_grid", list<double>(FIELD(eval.noise_grid))},
      {"budget_grid", list<int>(FIELD(eval.budget_grid))},
      // discriminative baseline
      {"disc_hidden_dims", list<int>(FIELD(discriminative.hidden_dims))},
      {"disc_epochs", number<int>(FIELD(discriminative.epochs))},
      {"disc_batch_size", number<int>(FIELD(discriminative.batch_size))},
      {"disc_learning_rate", number<double>(FIELD(discriminative.learning_rate))},
      {"disc_weight_decay", number<double>(FIELD(discriminative.weight_decay))},
      {"disc_seed", number<std::uint64_t>(FIELD(discriminative.seed))},
      // artifacts
      {"dataset_path", text(FIELD(paths.dataset))},
      {"checkpoint_path", text(FIELD(paths.checkpoint))},
      {"teacher_path", text(FIELD(paths.teacher))},
      {"dense_checkpoint_path", text(FIELD(paths.dense_checkpoint))},
      {"discriminative_prefix", text(FIELD(paths.discriminative_prefix))},
  };
  return keys;
}

#undef FIELD

}  // namespace

void AppConfig::validate() const {
  site.validate();
  if (data.n_users < 2) throw ConfigError("n_users must be at least 2");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  ModelConfig m = model;
  m.seq_len = site.n_antennas;
  m.validate();
  train.validate(site.n_antennas);
  for (int q : dense_budget_set)
    if (q < 1 || q > site.n_antennas) throw ConfigError("dense_budget_set entries must lie in [1, n_antennas]");
  infer.validate(site.n_antennas);
  discriminative.validate();
  for (const auto& name : eval.methods) parse_method(name);
  if (train_method != "fbbs" && train_method != "discriminative")
    throw ConfigError("config key 'train_method' must be fbbs or discriminative");
  if (budget_regime != "sparse" && budget_regime != "dense")
    throw ConfigError("config key 'budget_regime' must be sparse or dense");
}

TrainConfig AppConfig::effective_train() const {
  TrainConfig t = train;
  if (budget_regime == "dense") t.budget_set = dense_budget_set;
  return t;
}

void apply_setting(AppConfig& cfg, std::string_view key, std::string_view value) {
  const auto& keys = registry();
  const auto it = keys.find(trim(key));
  if (it == keys.end()) throw ConfigError("unknown config key '" + std::string(trim(key)) + "'");
  it->second.set(cfg, it->first, value);
  cfg.model.seq_len = cfg.site.n_antennas;
}

AppConfig parse_config_text(std::string_view text, std::span<const std::string> overrides) {
  AppConfig cfg;
  cfg.dense_budget_set.resize(30);
  std::iota(cfg.dense_budget_set.begin(), cfg.dense_budget_set.end(), 3);
  cfg.model.seq_len = cfg.site.n_antennas;
  int line_no = 0;
  for (std::size_t start = 0; start <= text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + std::string(line) + "'");
    apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not KEY=VALUE");
    apply_setting(cfg, std::string_view(o).substr(0, eq), std::string_view(o).substr(eq + 1));
  }
  return cfg;
}

AppConfig parse_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), overrides);
}

std::string dump_config(const AppConfig& cfg) {
  std::string out;
  for (const auto& [key, binding] : registry()) out += key + " = " + binding.get(cfg) + "\n";
  return out;
}

}  // namespace fbbs
