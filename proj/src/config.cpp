#include "dpet/config.hpp"

#include <tomlplusplus/toml.hpp>

#include <fstream>
#include <map>
#include <sstream>

namespace dpet {

namespace {

using nlohmann::json;
using LineMap = std::map<std::string, long>;

std::string join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

json toml_value(const toml::node& n, const std::string& path, LineMap& lines, const std::string& origin) {
  lines[path] = static_cast<long>(n.source().begin.line);
  if (const auto* t = n.as_table()) {
    json obj = json::object();
    for (const auto& [k, v] : *t) {
      const std::string key(k.str());
      obj[key] = toml_value(v, join(path, key), lines, origin);
    }
    return obj;
  }
  if (const auto* a = n.as_array()) {
    json arr = json::array();
    for (std::size_t i = 0; i < a->size(); ++i)
      arr.push_back(toml_value(*a->get(i), path + "[" + std::to_string(i) + "]", lines, origin));
    return arr;
  }
  if (auto v = n.value_exact<int64_t>()) return *v;
  if (auto v = n.value_exact<double>()) return *v;
  if (auto v = n.value_exact<bool>()) return *v;
  if (auto v = n.value_exact<std::string>()) return *v;
  throw ConfigError(origin + ":" + std::to_string(n.source().begin.line) + ": unsupported value type for '" + path +
                    "'");
}

// Strict reader over a JSON tree; `lines` anchors messages when the tree came from TOML.
class Reader {
 public:
  Reader(const json& obj, std::string path, const LineMap* lines, const std::string& origin)
      : obj_(&obj), path_(std::move(path)), lines_(lines), origin_(origin) {}

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    std::string where = origin_;
    const std::string full = join(path_, key);
    if (lines_) {
      if (auto it = lines_->find(full.empty() ? path_ : full); it != lines_->end()) where += ":" + std::to_string(it->second);
    }
    throw ConfigError(where + ": " + what);
  }

  bool has(const std::string& key) const { return obj_->contains(key); }

  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& [k, v] : obj_->items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end())
        fail(k, "unknown key '" + join(path_, k) + "'");
    }
  }

  std::optional<Reader> section(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const json& v = obj_->at(key);
    if (!v.is_object()) fail(key, "'" + join(path_, key) + "' must be a table");
    return Reader(v, join(path_, key), lines_, origin_);
  }

  void require(const std::string& key) const {
    if (!has(key)) fail("", "missing required field '" + join(path_, key) + "'");
  }

  void get(const std::string& key, double& dst) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_number()) fail(key, "'" + join(path_, key) + "' must be a number");
    dst = v.get<double>();
  }

  template <class Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& dst) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_number_integer()) fail(key, "'" + join(path_, key) + "' must be an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) {
        dst = v.get<Int>();
        return;
      }
      if (v.get<long long>() < 0) fail(key, "'" + join(path_, key) + "' must be nonnegative");
    }
    dst = static_cast<Int>(v.get<long long>());
  }

  void get(const std::string& key, std::string& dst) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_string()) fail(key, "'" + join(path_, key) + "' must be a string");
    dst = v.get<std::string>();
  }

  template <class T>
  void get_list(const std::string& key, std::vector<T>& dst) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_array()) fail(key, "'" + join(path_, key) + "' must be an array");
    std::vector<T> out;
    for (const auto& e : v) {
      const bool ok = std::is_integral_v<T> ? e.is_number_integer() : e.is_number();
      if (!ok) fail(key, "'" + join(path_, key) + "' has an element of the wrong type");
      out.push_back(e.get<T>());
    }
    dst = std::move(out);
  }

 private:
  const json* obj_;
  std::string path_;
  const LineMap* lines_;
  std::string origin_;
};

KineticParams read_region(const Reader& r, const KineticParams& fallback) {
  r.allow({"K1", "k2", "k3", "fv"});
  KineticParams p = fallback;
  r.get("K1", p.K1);
  r.get("k2", p.k2);
  r.get("k3", p.k3);
  r.get("fv", p.fv);
  return p;
}

RunConfig read_config(const json& root, const LineMap* lines, const std::string& origin) {
  const Reader top(root, "", lines, origin);
  top.allow({"output_dir", "threads", "matrix_cache", "geometry", "schedule", "input_function", "phantom",
             "simulation", "recon", "fit", "bounds"});
  RunConfig c;
  std::string s;
  if (top.has("output_dir")) {
    top.get("output_dir", s);
    c.output_dir = s;
  }
  if (top.has("matrix_cache")) {
    s.clear();
    top.get("matrix_cache", s);
    c.matrix_cache = s;
  }
  top.get("threads", c.threads);

  if (auto g = top.section("geometry")) {
    g->allow({"width", "height", "voxel_size", "n_angles", "n_radial_bins", "bin_width"});
    g->get("width", c.geometry.width);
    g->get("height", c.geometry.height);
    g->get("voxel_size", c.geometry.voxel_size);
    g->get("n_angles", c.geometry.n_angles);
    g->get("n_radial_bins", c.geometry.n_radial_bins);
    g->get("bin_width", c.geometry.bin_width);
  }

  if (auto sc = top.section("schedule")) {
    sc->allow({"frames", "durations", "start"});
    if (sc->has("frames") && sc->has("durations")) sc->fail("durations", "give either schedule.frames or schedule.durations");
    double start = 0.0;
    sc->get("start", start);
    try {
      if (sc->has("frames")) {
        std::string frames;
        sc->get("frames", frames);
        const FrameSchedule parsed = FrameSchedule::parse(frames);
        c.schedule = FrameSchedule::from_durations(parsed.durations(), start);
      } else if (sc->has("durations")) {
        std::vector<double> d;
        sc->get_list("durations", d);
        c.schedule = FrameSchedule::from_durations(d, start);
      } else {
        c.schedule = FrameSchedule::from_durations(c.schedule.durations(), start);
      }
    } catch (const std::invalid_argument& e) {
      sc->fail(sc->has("frames") ? "frames" : "durations", e.what());
    }
  }

  if (auto in = top.section("input_function")) {
    in->allow({"a1", "a2", "a3", "lambda1", "lambda2", "lambda3", "delay"});
    in->get("a1", c.input.a1);
    in->get("a2", c.input.a2);
    in->get("a3", c.input.a3);
    in->get("lambda1", c.input.lambda1);
    in->get("lambda2", c.input.lambda2);
    in->get("lambda3", c.input.lambda3);
    in->get("delay", c.input.delay);
  }

  if (auto ph = top.section("phantom")) {
    ph->allow({"gm", "wm", "tumor", "blood"});
    auto region = [&](const char* name, std::optional<KineticParams>& dst) {
      if (auto r = ph->section(name)) dst = read_region(*r, dst.value_or(KineticParams{}));
    };
    region("gm", c.regions.gm);
    region("wm", c.regions.wm);
    region("tumor", c.regions.tumor);
    region("blood", c.regions.blood);
  }

  auto sim = top.section("simulation");
  if (!sim) top.fail("", "missing required field 'simulation.seed'");
  sim->allow({"total_counts", "background_fraction", "seed"});
  sim->require("seed");
  sim->get("total_counts", c.simulation.total_counts);
  sim->get("background_fraction", c.simulation.background_fraction);
  sim->get("seed", c.simulation.seed);

  if (auto b = top.section("bounds")) {
    b->allow({"lower", "upper"});
    for (const char* key : {"lower", "upper"}) {
      std::vector<double> v;
      b->get_list(key, v);
      if (!b->has(key)) continue;
      if (v.size() != kNumParams) b->fail(key, std::string("'bounds.") + key + "' needs 4 values [K1, k2, k3, fv]");
      Eigen::Vector4d& dst = std::string_view(key) == "lower" ? c.recon.lm.box.lower : c.recon.lm.box.upper;
      dst = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
    }
  }

  if (auto r = top.section("recon")) {
    r->allow({"algorithm", "iterations", "inner_updates", "beta", "sigma", "gamma", "delta", "spatial_beta",
              "spatial_delta", "floor_fraction", "lm_iters", "indirect_fit_every", "checkpoints"});
    if (r->has("algorithm")) {
      std::string name;
      r->get("algorithm", name);
      try {
        c.recon.algorithm = parse_algorithm(name);
      } catch (const std::invalid_argument& e) {
        r->fail("algorithm", e.what());
      }
    }
    r->get("iterations", c.recon.n_outer_iters);
    r->get("inner_updates", c.recon.n_inner_image_updates);
    r->get("beta", c.recon.beta);
    r->get("sigma", c.recon.sigma);
    r->get("gamma", c.recon.map_prior.gamma);
    r->get("delta", c.recon.map_prior.delta);
    r->get("spatial_beta", c.recon.spatial_beta);
    r->get("spatial_delta", c.recon.spatial_delta);
    r->get("floor_fraction", c.recon.floor_fraction);
    r->get("lm_iters", c.recon.lm.max_iters);
    r->get("indirect_fit_every", c.recon.indirect_fit_every);
    r->get_list("checkpoints", c.recon.checkpoints);
  }

  if (auto f = top.section("fit")) {
    f->allow({"gamma", "delta", "sweeps", "max_iters"});
    f->get("gamma", c.fit.prior.gamma);
    f->get("delta", c.fit.prior.delta);
    f->get("sweeps", c.fit.sweeps);
    f->get("max_iters", c.fit.max_iters);
  }

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

}  // namespace

void RunConfig::validate() const {
  if (threads < 0) throw std::invalid_argument("threads must be >= 0");
  if (output_dir.empty()) throw std::invalid_argument("output_dir must not be empty");
  geometry.validate();
  input.validate(total_scan_time(schedule));
  (void)build_phantom(8, 8, regions);
  if (!(simulation.total_counts > 0.0)) throw std::invalid_argument("simulation.total_counts must be > 0");
  if (!(simulation.background_fraction >= 0.0 && simulation.background_fraction < 1.0))
    throw std::invalid_argument("simulation.background_fraction must lie in [0, 1)");
  recon.validate();
  for (int cp : recon.checkpoints)
    if (cp < 1) throw std::invalid_argument("recon.checkpoints must be >= 1");
  fit.prior.validate();
  if (fit.sweeps < 1) throw std::invalid_argument("fit.sweeps must be >= 1");
  if (fit.max_iters < 1) throw std::invalid_argument("fit.max_iters must be >= 1");
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  toml::table table;
  try {
    table = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
  LineMap lines;
  const json root = toml_value(table, "", lines, origin);
  return read_config(root, &lines, origin);
}

RunConfig run_config_from_json(const json& j, const std::string& origin) {
  if (!j.is_object()) throw ConfigError(origin + ": config must be an object");
  return read_config(j, nullptr, origin);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") {
    json j;
    try {
      j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (j.contains("config")) return run_config_from_json(j.at("config"), path.string());
    return run_config_from_json(j, path.string());
  }
  return parse_run_config(ss.str(), path.string());
}

json to_json(const RunConfig& c) {
  auto region = [](const std::optional<KineticParams>& p) {
    const KineticParams v = p.value_or(KineticParams{});
    return json{{"K1", v.K1}, {"k2", v.k2}, {"k3", v.k3}, {"fv", v.fv}};
  };
  const auto& box = c.recon.lm.box;
  json j;
  j["output_dir"] = c.output_dir.string();
  j["threads"] = c.threads;
  if (!c.matrix_cache.empty()) j["matrix_cache"] = c.matrix_cache.string();
  j["geometry"] = to_json(c.geometry);
  j["schedule"] = {{"start", c.schedule.start(0)}, {"durations", c.schedule.durations()}};
  j["input_function"] = {{"a1", c.input.a1},           {"a2", c.input.a2},           {"a3", c.input.a3},
                         {"lambda1", c.input.lambda1}, {"lambda2", c.input.lambda2}, {"lambda3", c.input.lambda3},
                         {"delay", c.input.delay}};
  j["phantom"] = {{"gm", region(c.regions.gm)},
                  {"wm", region(c.regions.wm)},
                  {"tumor", region(c.regions.tumor)},
                  {"blood", region(c.regions.blood)}};
  j["simulation"] = {{"total_counts", c.simulation.total_counts},
                     {"background_fraction", c.simulation.background_fraction},
                     {"seed", c.simulation.seed}};
  j["bounds"] = {{"lower", std::vector<double>(box.lower.data(), box.lower.data() + kNumParams)},
                 {"upper", std::vector<double>(box.upper.data(), box.upper.data() + kNumParams)}};
  j["recon"] = {{"algorithm", std::string(to_string(c.recon.algorithm))},
                {"iterations", c.recon.n_outer_iters},
                {"inner_updates", c.recon.n_inner_image_updates},
                {"beta", c.recon.beta},
                {"sigma", c.recon.sigma},
                {"gamma", c.recon.map_prior.gamma},
                {"delta", c.recon.map_prior.delta},
                {"spatial_beta", c.recon.spatial_beta},
                {"spatial_delta", c.recon.spatial_delta},
                {"floor_fraction", c.recon.floor_fraction},
                {"lm_iters", c.recon.lm.max_iters},
                {"indirect_fit_every", c.recon.indirect_fit_every},
                {"checkpoints", c.recon.checkpoints}};
  j["fit"] = {{"gamma", c.fit.prior.gamma},
              {"delta", c.fit.prior.delta},
              {"sweeps", c.fit.sweeps},
              {"max_iters", c.fit.max_iters}};
  return j;
}

}  // namespace dpet
