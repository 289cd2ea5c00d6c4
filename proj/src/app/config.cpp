#include "mdgait/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "mdgait/binary_io.hpp"
#include "mdgait/error.hpp"

namespace mdgait::app {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename V>
V parse_number(std::string_view key, std::string_view text) {
  V value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("invalid value \"" + std::string(text) + "\" for " + std::string(key));
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_number<std::size_t>(k, v);
          },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field double_field(Member member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_number<double>(k, v);
          },
          [member](const RunConfig& c) { return format_double(std::invoke(member, c)); }};
}

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> f = [] {
    std::map<std::string, Field, std::less<>> m;
    m["image_size"] = size_field([](auto& c) -> auto& { return c.model.vit.image_size; });
    m["patch_size"] = size_field([](auto& c) -> auto& { return c.model.vit.patch_size; });
    m["hidden_dim"] = size_field([](auto& c) -> auto& { return c.model.vit.hidden_dim; });
    m["depth"] = size_field([](auto& c) -> auto& { return c.model.vit.depth; });
    m["heads"] = size_field([](auto& c) -> auto& { return c.model.vit.heads; });
    m["mlp_dim"] = size_field([](auto& c) -> auto& { return c.model.vit.mlp_dim; });
    m["feature_dim"] = size_field([](auto& c) -> auto& { return c.model.vit.feature_dim; });
    m["num_classes"] = size_field([](auto& c) -> auto& { return c.model.num_classes; });
    m["lr_initial"] = double_field([](auto& c) -> auto& { return c.train.lr_initial; });
    m["momentum"] = double_field([](auto& c) -> auto& { return c.train.momentum; });
    m["weight_decay"] = double_field([](auto& c) -> auto& { return c.train.weight_decay; });
    m["batch_size"] = size_field([](auto& c) -> auto& { return c.train.batch_size; });
    m["epochs"] = size_field([](auto& c) -> auto& { return c.train.epochs; });
    m["warmup_fraction"] = double_field([](auto& c) -> auto& { return c.train.warmup_fraction; });
    m["eval_batch"] = size_field([](auto& c) -> auto& { return c.eval_batch; });
    m["seed"] = {[](RunConfig& c, std::string_view k, std::string_view v) {
                   c.train.seed = parse_number<std::uint64_t>(k, v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }};
    m["stream"] = {[](RunConfig& c, std::string_view, std::string_view v) {
                     c.train.stream = train::parse_stream_mode(std::string(v));
                   },
                   [](const RunConfig& c) { return std::string(train::to_string(c.train.stream)); }};
    return m;
  }();
  return f;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, field] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  auto it = fields().find(trim(key));
  if (it == fields().end()) throw ConfigError("unknown configuration key \"" + std::string(key) + "\"");
  it->second.set(cfg, it->first, trim(value));
}

std::string get_value(const RunConfig& cfg, std::string_view key) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown configuration key \"" + std::string(key) + "\"");
  return it->second.get(cfg);
}

void apply_text(RunConfig& cfg, std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    set_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_file(RunConfig& cfg, const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  apply_text(cfg, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string dump(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& key : config_keys()) os << key << '=' << get_value(cfg, key) << '\n';
  return os.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mdgait::app
