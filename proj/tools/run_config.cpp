#include "run_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "bilevel/errors.hpp"
#include "bilevel/imaging.hpp"

namespace bilevel::cli {

namespace {

using json = nlohmann::json;
using Setter = std::function<void(RunConfig&, const json&)>;

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw ParameterError("config key '" + key + "': " + what);
}

double num(const std::string& key, const json& v) {
  if (!v.is_number()) bad(key, "expected a number");
  return v.get<double>();
}

double positive(const std::string& key, const json& v) {
  const double d = num(key, v);
  if (!(d > 0.0)) bad(key, "must be > 0");
  return d;
}

double nonneg(const std::string& key, const json& v) {
  const double d = num(key, v);
  if (!(d >= 0.0)) bad(key, "must be >= 0");
  return d;
}

std::uint64_t count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) bad(key, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::size_t pos_count(const std::string& key, const json& v) {
  const auto n = count(key, v);
  if (n == 0) bad(key, "must be >= 1");
  return static_cast<std::size_t>(n);
}

bool boolean(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad(key, "expected true or false");
  return v.get<bool>();
}

std::string text(const std::string& key, const json& v) {
  if (!v.is_string()) bad(key, "expected a string");
  return v.get<std::string>();
}

std::vector<std::string> strings(const std::string& key, const json& v) {
  if (!v.is_array()) bad(key, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(text(key, e));
  return out;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"problem",
       [](RunConfig& c, const json& v) {
         c.problem = text("problem", v);
         if (c.problem != "quadratic" && c.problem != "tvdisc" && c.problem != "foe" && c.problem != "icnn2")
           bad("problem", "unknown kind '" + c.problem + "'");
       }},
      {"mu_fstar", [](RunConfig& c, const json& v) { c.mu_fstar = positive("mu_fstar", v); }},
      {"mu_g", [](RunConfig& c, const json& v) { c.mu_g = positive("mu_g", v); }},
      {"n_filters", [](RunConfig& c, const json& v) { c.n_filters = pos_count("n_filters", v); }},
      {"kernel_h", [](RunConfig& c, const json& v) { c.kernel_h = pos_count("kernel_h", v); }},
      {"kernel_w", [](RunConfig& c, const json& v) { c.kernel_w = pos_count("kernel_w", v); }},
      {"reg_lambda", [](RunConfig& c, const json& v) { c.reg_lambda = positive("reg_lambda", v); }},
      {"eps_s", [](RunConfig& c, const json& v) { c.eps_s = positive("eps_s", v); }},
      {"mu_q", [](RunConfig& c, const json& v) { c.mu_q = positive("mu_q", v); }},
      {"mu_y", [](RunConfig& c, const json& v) { c.mu_y = positive("mu_y", v); }},
      {"nonsmooth_tv", [](RunConfig& c, const json& v) { c.nonsmooth_tv = boolean("nonsmooth_tv", v); }},
      {"gamma", [](RunConfig& c, const json& v) { c.gamma = positive("gamma", v); }},
      {"w", [](RunConfig& c, const json& v) { c.w = positive("w", v); }},
      {"mu_reg", [](RunConfig& c, const json& v) { c.mu_reg = positive("mu_reg", v); }},
      {"n1", [](RunConfig& c, const json& v) { c.n1 = pos_count("n1", v); }},
      {"n2", [](RunConfig& c, const json& v) { c.n2 = pos_count("n2", v); }},
      {"mu_z", [](RunConfig& c, const json& v) { c.mu_z = positive("mu_z", v); }},
      {"mu_c", [](RunConfig& c, const json& v) { c.mu_c = positive("mu_c", v); }},
      {"images", [](RunConfig& c, const json& v) { c.images = strings("images", v); }},
      {"test_images", [](RunConfig& c, const json& v) { c.test_images = strings("test_images", v); }},
      {"synthetic_count", [](RunConfig& c, const json& v) { c.synthetic_count = count("synthetic_count", v); }},
      {"synthetic_test_count",
       [](RunConfig& c, const json& v) { c.synthetic_test_count = count("synthetic_test_count", v); }},
      {"synthetic_height", [](RunConfig& c, const json& v) { c.synthetic_height = pos_count("synthetic_height", v); }},
      {"synthetic_width", [](RunConfig& c, const json& v) { c.synthetic_width = pos_count("synthetic_width", v); }},
      {"noise_sigma", [](RunConfig& c, const json& v) { c.noise_sigma = nonneg("noise_sigma", v); }},
      {"noise_seed", [](RunConfig& c, const json& v) { c.noise_seed = count("noise_seed", v); }},
      {"seed", [](RunConfig& c, const json& v) { c.seed = count("seed", v); }},
      {"init_filters", [](RunConfig& c, const json& v) { c.init_filters = text("init_filters", v); }},
      {"rho_down", [](RunConfig& c, const json& v) { c.maid.rho_down = num("rho_down", v); }},
      {"rho_up", [](RunConfig& c, const json& v) { c.maid.rho_up = num("rho_up", v); }},
      {"nu_down", [](RunConfig& c, const json& v) { c.maid.nu_down = num("nu_down", v); }},
      {"nu_up", [](RunConfig& c, const json& v) { c.maid.nu_up = num("nu_up", v); }},
      {"max_bt", [](RunConfig& c, const json& v) { c.maid.max_bt = static_cast<int>(pos_count("max_bt", v)); }},
      {"descent_lambda", [](RunConfig& c, const json& v) { c.maid.lambda = nonneg("descent_lambda", v); }},
      {"alpha0", [](RunConfig& c, const json& v) { c.maid.alpha0 = positive("alpha0", v); }},
      {"tol0",
       [](RunConfig& c, const json& v) {
         const double t = positive("tol0", v);
         c.maid.tol0 = {t, t, t, t};
       }},
      {"eps_x0", [](RunConfig& c, const json& v) { c.maid.tol0.eps_x = positive("eps_x0", v); }},
      {"eps_y0", [](RunConfig& c, const json& v) { c.maid.tol0.eps_y = positive("eps_y0", v); }},
      {"delta_X0", [](RunConfig& c, const json& v) { c.maid.tol0.delta_X = positive("delta_X0", v); }},
      {"delta_Y0", [](RunConfig& c, const json& v) { c.maid.tol0.delta_Y = positive("delta_Y0", v); }},
      {"max_outer", [](RunConfig& c, const json& v) { c.maid.max_outer = static_cast<int>(count("max_outer", v)); }},
      {"budget_cap",
       [](RunConfig& c, const json& v) {
         if (!v.is_number_integer()) bad("budget_cap", "expected an integer");
         c.maid.budget_cap = v.get<long>();
       }},
      {"tol_floor", [](RunConfig& c, const json& v) { c.maid.tol_floor = positive("tol_floor", v); }},
      {"adaptive", [](RunConfig& c, const json& v) { c.maid.adaptive = boolean("adaptive", v); }},
      {"max_lower_iter",
       [](RunConfig& c, const json& v) { c.maid.max_lower_iter = static_cast<long>(pos_count("max_lower_iter", v)); }},
      {"baseline_alpha", [](RunConfig& c, const json& v) { c.baseline_alpha = positive("baseline_alpha", v); }},
      {"baseline_tol", [](RunConfig& c, const json& v) { c.baseline_tol = positive("baseline_tol", v); }},
      {"tol_grid",
       [](RunConfig& c, const json& v) {
         if (!v.is_array() || v.empty()) bad("tol_grid", "expected a non-empty array of numbers");
         c.tol_grid.clear();
         for (const auto& e : v) c.tol_grid.push_back(positive("tol_grid", e));
       }},
      {"fd_step", [](RunConfig& c, const json& v) { c.fd_step = positive("fd_step", v); }},
      {"fd_tol", [](RunConfig& c, const json& v) { c.fd_tol = positive("fd_tol", v); }},
      {"denoise_tol", [](RunConfig& c, const json& v) { c.denoise_tol = positive("denoise_tol", v); }},
      {"out", [](RunConfig& c, const json& v) { c.out = text("out", v); }},
  };
  return table;
}

TrainingPair pair_of(const Image& clean, const RunConfig& cfg, std::uint64_t noise_seed) {
  const Image noisy = add_gaussian_noise(clean, cfg.noise_sigma, noise_seed);
  return {clean.pixels * (1.0 / 255.0), noisy.pixels * (1.0 / 255.0)};
}

std::vector<TrainingPair> image_set(const RunConfig& cfg, const std::vector<std::string>& paths,
                                    std::size_t synthetic, std::uint64_t stream) {
  std::vector<TrainingPair> out;
  const std::uint64_t base = cfg.effective_noise_seed() + stream;
  for (std::size_t i = 0; i < paths.size(); ++i) out.push_back(pair_of(load_pgm(paths[i]), cfg, base + i));
  for (std::size_t i = 0; i < synthetic; ++i) {
    const std::uint64_t k = paths.size() + i;
    const Image clean = synthetic_image(cfg.synthetic_height, cfg.synthetic_width, cfg.seed + stream + k);
    out.push_back(pair_of(clean, cfg, base + k));
  }
  return out;
}

}  // namespace

RunConfig parse_config(const std::string& text_in) {
  json doc;
  try {
    doc = json::parse(text_in);
  } catch (const json::parse_error& e) {
    throw ParameterError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParameterError("config must be a JSON object");
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : doc.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ParameterError("unknown config key '" + key + "'");
    it->second(cfg, value);
  }
  cfg.maid.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

ProblemPtr make_problem(const RunConfig& c) {
  auto or_default = [](std::size_t v, std::size_t d) { return v == 0 ? d : v; };
  auto mu_or = [&](double d) { return c.mu_g > 0.0 ? c.mu_g : d; };
  if (c.problem == "quadratic")
    return quadratic_make(mu_or(1.0), c.mu_fstar, or_default(c.n_filters, 1), or_default(c.kernel_h, 3),
                          or_default(c.kernel_w, 3));
  if (c.problem == "tvdisc") {
    TvOptions o;
    o.lambda = c.reg_lambda;
    o.mu_g = mu_or(o.mu_g);
    o.eps_s = c.eps_s;
    o.n_filters = or_default(c.n_filters, o.n_filters);
    o.kh = or_default(c.kernel_h, o.kh);
    o.kw = or_default(c.kernel_w, o.kw);
    o.mu_q = c.mu_q;
    o.mu_y = c.mu_y;
    o.nonsmooth = c.nonsmooth_tv;
    return tvdisc_make(o);
  }
  if (c.problem == "foe") {
    FoeOptions o;
    o.gamma = c.gamma;
    o.mu_g = mu_or(o.mu_g);
    o.w = c.w;
    o.n_filters = or_default(c.n_filters, o.n_filters);
    o.kh = or_default(c.kernel_h, o.kh);
    o.kw = or_default(c.kernel_w, o.kw);
    o.mu_reg = c.mu_reg;
    return foe_make(o);
  }
  IcnnOptions o;
  o.gamma = c.gamma;
  o.mu_g = mu_or(o.mu_g);
  o.w = c.w;
  o.n1 = c.n1;
  o.n2 = c.n2;
  o.kh = or_default(c.kernel_h, o.kh);
  o.kw = or_default(c.kernel_w, o.kw);
  o.mu_z = c.mu_z;
  o.mu_c = c.mu_c;
  o.mu_reg = c.mu_reg;
  return icnn2_make(o);
}

std::vector<TrainingPair> training_set(const RunConfig& cfg) {
  auto s = image_set(cfg, cfg.images, cfg.synthetic_count, 0);
  if (s.empty()) throw ParameterError("no training images: set 'images' or 'synthetic_count'");
  return s;
}

std::vector<TrainingPair> test_set(const RunConfig& cfg) {
  return image_set(cfg, cfg.test_images, cfg.synthetic_test_count, 1'000'000);
}

Tensor initial_theta(const RunConfig& cfg, const Problem& problem) {
  if (cfg.init_filters.empty()) return problem.initial_theta(cfg.seed);
  Tensor t = read_f64t(cfg.init_filters);
  if (t.dims() != problem.theta_dims())
    throw DimensionError("init_filters has dims " + to_string(t.dims()) + ", expected " +
                         to_string(problem.theta_dims()));
  return t;
}

}  // namespace bilevel::cli
