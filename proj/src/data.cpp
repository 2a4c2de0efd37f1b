#include "fame/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fame/error.hpp"

namespace fame {

int Dataset::input_channels() const { return samples.empty() ? 0 : static_cast<int>(samples[0].inputs.size()); }
int Dataset::output_channels() const { return samples.empty() ? 0 : static_cast<int>(samples[0].outputs.size()); }

void Dataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (static_cast<int>(s.inputs.size()) != input_channels() || static_cast<int>(s.outputs.size()) != output_channels()) {
      throw Error(Errc::dimension, "sample " + std::to_string(i) + " has a different channel count");
    }
    if (s.inputs.empty() || s.outputs.empty()) throw Error(Errc::dimension, "samples need inputs and outputs");
    for (const auto& f : s.inputs) fame::validate(f);
    for (const auto& f : s.outputs) fame::validate(f);
  }
}

void GenSpec::validate() const {
  if (samples < 1 || inputs < 1 || outputs < 1) throw Error(Errc::config, "sample and channel counts must be positive");
  if (input_points < 2 || output_points < 2) throw Error(Errc::config, "grids need at least two points");
  for (int c : input_point_choices)
    if (c < 2) throw Error(Errc::config, "grid size choices must be at least 2");
  if (!widths.empty() && static_cast<int>(widths.size()) != inputs) {
    throw Error(Errc::config, "one RBF width per input channel is required");
  }
  for (double w : widths)
    if (!(w > 0.0)) throw Error(Errc::config, "RBF widths must be positive");
  if (!(noise >= 0.0) || !(noise_sd >= 0.0)) throw Error(Errc::config, "noise level must be non-negative");
  const int m = target == Target::sin_cos_sum ? 2 : 1;
  if (outputs != m) throw Error(Errc::config, "output count does not match the target map");
}

double GenSpec::width(int channel) const { return widths.empty() ? 0.3 : widths[static_cast<std::size_t>(channel)]; }

nlohmann::json to_json(const GenSpec& s) {
  return {{"case", s.case_id},
          {"samples", s.samples},
          {"inputs", s.inputs},
          {"outputs", s.outputs},
          {"widths", s.widths},
          {"input_points", s.input_points},
          {"output_points", s.output_points},
          {"input_point_choices", s.input_point_choices},
          {"shared_grid", s.shared_grid},
          {"noise", s.noise},
          {"noise_sd", s.noise_sd},
          {"target", s.target == Target::sin_sum ? "sin" : "sincos"},
          {"seed", s.seed}};
}

GenSpec gen_spec_from_json(const nlohmann::json& j) {
  GenSpec s;
  s.case_id = j.at("case").get<int>();
  s.samples = j.at("samples").get<int>();
  s.inputs = j.at("inputs").get<int>();
  s.outputs = j.at("outputs").get<int>();
  s.widths = j.at("widths").get<std::vector<double>>();
  s.input_points = j.at("input_points").get<int>();
  s.output_points = j.at("output_points").get<int>();
  s.input_point_choices = j.at("input_point_choices").get<std::vector<int>>();
  s.shared_grid = j.at("shared_grid").get<bool>();
  s.noise = j.at("noise").get<double>();
  s.noise_sd = j.at("noise_sd").get<double>();
  s.target = j.at("target").get<std::string>() == "sincos" ? Target::sin_cos_sum : Target::sin_sum;
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

GenSpec case_defaults(int case_id) {
  GenSpec s;
  s.case_id = case_id;
  switch (case_id) {
    case 1:
      break;
    case 2:
      s.input_points = s.output_points = 50;
      break;
    case 3:
      s.input_point_choices = {10, 20, 50};
      s.shared_grid = false;
      break;
    case 4:
      s.widths = {0.2, 0.3, 0.5};
      break;
    case 5:
      s.noise = 0.1;
      break;
    case 6:
      s.outputs = 2;
      s.target = Target::sin_cos_sum;
      break;
    case 7:
      s.inputs = 5;
      break;
    case 8: {
      s.inputs = 10;
      const double w[] = {0.2, 0.3, 0.5};
      for (int j = 0; j < s.inputs; ++j) s.widths.push_back(w[j % 3]);
      break;
    }
    default:
      throw Error(Errc::config, "unknown synthetic case " + std::to_string(case_id) + " (expected 1..8)");
  }
  return s;
}

Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x46414d45u};
  return Rng(seq);
}

std::vector<double> irregular_grid(int n, Rng& rng) {
  if (n < 2) throw Error(Errc::config, "an irregular grid needs at least two points");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    std::vector<double> g{0.0, 1.0};
    for (int i = 2; i < n; ++i) g.push_back(u(rng));
    std::sort(g.begin(), g.end());
    if (std::adjacent_find(g.begin(), g.end()) == g.end()) return g;
  }
}

Vector sample_gp_values(double sigma, std::span<const double> points, Rng& rng) {
  if (!(sigma > 0.0)) throw Error(Errc::domain, "RBF width must be positive");
  std::vector<double> uniq(points.begin(), points.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const Eigen::Index n = static_cast<Eigen::Index>(uniq.size());
  Matrix k(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      const double d = uniq[static_cast<std::size_t>(a)] - uniq[static_cast<std::size_t>(b)];
      k(a, b) = std::exp(-d * d / (2.0 * sigma * sigma));
    }
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  for (double jitter = 1e-8; jitter <= 1e-4 * (1.0 + 1e-9); jitter *= 10.0) {
    Eigen::LLT<Matrix> llt(k + jitter * Matrix::Identity(n, n));
    if (llt.info() != Eigen::Success) continue;
    const Vector f = llt.matrixL() * z;
    Vector out(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto it = std::lower_bound(uniq.begin(), uniq.end(), points[i]);
      out[static_cast<Eigen::Index>(i)] = f[it - uniq.begin()];
    }
    return out;
  }
  throw Error(Errc::domain, "RBF kernel matrix is not positive definite even with jitter 1e-4");
}

FunctionSample sample_gp(double sigma, std::span<const double> grid, Rng& rng) {
  if (!std::is_sorted(grid.begin(), grid.end())) throw Error(Errc::ordering, "GP grid must be sorted");
  const Vector v = sample_gp_values(sigma, grid, rng);
  FunctionSample f;
  f.times.assign(grid.begin(), grid.end());
  f.values.assign(v.data(), v.data() + v.size());
  return f;
}

std::vector<double> response(Target target, double input_sum) {
  if (target == Target::sin_sum) return {std::sin(input_sum)};
  return {std::sin(input_sum), std::cos(input_sum)};
}

Dataset make_case(const GenSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.provenance = {{"source", "synthetic"}, {"spec", to_json(spec)}};
  Rng grid_rng = derived_rng(spec.seed, ~std::uint64_t{0});
  const std::vector<double> shared_out = irregular_grid(spec.output_points, grid_rng);
  // Aligned cases observe inputs and outputs at the same instants.
  const bool aligned = spec.shared_grid && spec.input_points == spec.output_points && spec.input_point_choices.empty();
  const std::vector<double> shared_in = aligned ? shared_out : irregular_grid(spec.input_points, grid_rng);

  ds.samples.resize(static_cast<std::size_t>(spec.samples));
  for (int i = 0; i < spec.samples; ++i) {
    Rng rng = derived_rng(spec.seed, static_cast<std::uint64_t>(i));
    std::vector<double> in_grid, out_grid;
    if (spec.shared_grid) {
      in_grid = shared_in;
      out_grid = shared_out;
    } else {
      int lambda = spec.input_points;
      if (!spec.input_point_choices.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, spec.input_point_choices.size() - 1);
        lambda = spec.input_point_choices[pick(rng)];
      }
      in_grid = irregular_grid(lambda, rng);
      out_grid = shared_out;
    }
    std::vector<double> joint = in_grid;
    joint.insert(joint.end(), out_grid.begin(), out_grid.end());
    const std::size_t n_in = in_grid.size();

    Sample& s = ds.samples[static_cast<std::size_t>(i)];
    Vector sum_out = Vector::Zero(static_cast<Eigen::Index>(out_grid.size()));
    for (int j = 0; j < spec.inputs; ++j) {
      const Vector v = sample_gp_values(spec.width(j), joint, rng);
      FunctionSample f;
      f.times = in_grid;
      f.values.assign(v.data(), v.data() + n_in);
      s.inputs.push_back(std::move(f));
      sum_out += v.tail(static_cast<Eigen::Index>(out_grid.size()));
    }
    std::normal_distribution<double> normal(0.0, spec.noise_sd);
    s.outputs.resize(static_cast<std::size_t>(spec.outputs));
    for (auto& o : s.outputs) o.times = out_grid;
    for (Eigen::Index p = 0; p < sum_out.size(); ++p) {
      const auto y = response(spec.target, sum_out[p]);
      for (std::size_t z = 0; z < y.size(); ++z) {
        const double eps = spec.noise > 0.0 ? spec.noise * normal(rng) : 0.0;
        s.outputs[z].values.push_back(y[z] + eps);
      }
    }
  }
  return ds;
}

// ---- CSV -------------------------------------------------------------------

namespace {

double parse_number(std::string_view field, std::size_t row, const char* column) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw Error(Errc::ingestion, "row " + std::to_string(row) + ": non-numeric " + column + " '" + std::string(field) + "'");
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

}  // namespace

Dataset parse_csv(const std::string& text) {
  Dataset ds;
  ds.provenance = {{"source", "csv"}};
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  int col_id = -1, col_role = -1, col_ch = -1, col_t = -1, col_v = -1;
  bool header = false;

  struct Obs {
    double t;
    double v;
    std::size_t row;
  };
  std::vector<std::string> order;
  // (sample, role, channel) -> observations
  std::map<std::string, std::map<std::pair<int, int>, std::vector<Obs>>> groups;

  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (!header) {
      for (int i = 0; i < static_cast<int>(fields.size()); ++i) {
        const auto& f = fields[static_cast<std::size_t>(i)];
        if (f == "sample_id") col_id = i;
        else if (f == "role") col_role = i;
        else if (f == "channel") col_ch = i;
        else if (f == "t") col_t = i;
        else if (f == "value") col_v = i;
      }
      const std::pair<int, const char*> need[] = {
          {col_id, "sample_id"}, {col_role, "role"}, {col_ch, "channel"}, {col_t, "t"}, {col_v, "value"}};
      for (const auto& [c, name] : need)
        if (c < 0) throw Error(Errc::ingestion, std::string("row 1: missing column '") + name + "'");
      header = true;
      continue;
    }
    const int width = std::max({col_id, col_role, col_ch, col_t, col_v}) + 1;
    if (static_cast<int>(fields.size()) < width) {
      throw Error(Errc::ingestion, "row " + std::to_string(row) + ": expected " + std::to_string(width) + " fields");
    }
    const std::string id(fields[static_cast<std::size_t>(col_id)]);
    const auto role_s = fields[static_cast<std::size_t>(col_role)];
    int role = 0;
    if (role_s == "in") role = 0;
    else if (role_s == "out") role = 1;
    else throw Error(Errc::ingestion, "row " + std::to_string(row) + ": role must be 'in' or 'out'");
    const double ch_d = parse_number(fields[static_cast<std::size_t>(col_ch)], row, "channel");
    if (ch_d < 0 || ch_d != std::floor(ch_d)) {
      throw Error(Errc::ingestion, "row " + std::to_string(row) + ": channel must be a non-negative integer");
    }
    const double t = parse_number(fields[static_cast<std::size_t>(col_t)], row, "t");
    const double v = parse_number(fields[static_cast<std::size_t>(col_v)], row, "value");
    if (!groups.count(id)) order.push_back(id);
    groups[id][{role, static_cast<int>(ch_d)}].push_back({t, v, row});
  }

  // Horizon per (role, channel): largest observed time.
  std::map<std::pair<int, int>, double> horizon;
  for (const auto& [id, chans] : groups)
    for (const auto& [key, obs] : chans)
      for (const auto& o : obs) horizon[key] = std::max(horizon.count(key) ? horizon[key] : 0.0, o.t);

  for (const auto& id : order) {
    Sample s;
    for (const auto& [key, obs_in] : groups[id]) {
      auto obs = obs_in;
      std::stable_sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) { return a.t < b.t; });
      for (std::size_t i = 1; i < obs.size(); ++i) {
        if (obs[i].t == obs[i - 1].t) {
          throw Error(Errc::ingestion, "row " + std::to_string(obs[i].row) + ": duplicate (sample, channel, t) for sample '" +
                                           id + "'");
        }
      }
      FunctionSample f;
      f.horizon = horizon[key];
      if (!(f.horizon > 0.0)) {
        throw Error(Errc::ingestion, "row " + std::to_string(obs.front().row) + ": channel horizon must be positive");
      }
      for (const auto& o : obs) {
        f.times.push_back(o.t);
        f.values.push_back(o.v);
      }
      auto& dest = key.first == 0 ? s.inputs : s.outputs;
      if (key.second != static_cast<int>(dest.size())) {
        throw Error(Errc::ingestion, "sample '" + id + "': channels must be numbered 0, 1, ... without gaps");
      }
      try {
        fame::validate(f);
      } catch (const Error& e) {
        throw Error(Errc::ingestion, "row " + std::to_string(obs.front().row) + ": " + e.what());
      }
      dest.push_back(std::move(f));
    }
    ds.samples.push_back(std::move(s));
  }
  try {
    ds.validate();
  } catch (const Error& e) {
    throw Error(Errc::ingestion, e.what());
  }
  ds.provenance["sample_ids"] = order;
  return ds;
}

Dataset load_csv(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open '" + file.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Dataset ds = parse_csv(ss.str());
  ds.provenance["file"] = file.string();
  return ds;
}

std::string to_csv(const Dataset& ds) {
  std::string out = "sample_id,role,channel,t,value\n";
  char buf[64];
  auto num = [&](double x) {
    const auto res = std::to_chars(buf, buf + sizeof buf, x);  // shortest round-trip form
    return std::string(buf, res.ptr);
  };
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto emit = [&](const std::vector<FunctionSample>& fs, const char* role) {
      for (std::size_t c = 0; c < fs.size(); ++c)
        for (std::size_t k = 0; k < fs[c].times.size(); ++k) {
          out += std::to_string(i) + ',' + role + ',' + std::to_string(c) + ',' + num(fs[c].times[k]) + ',' +
                 num(fs[c].values[k]) + '\n';
        }
    };
    emit(ds.samples[i].inputs, "in");
    emit(ds.samples[i].outputs, "out");
  }
  return out;
}

void save_csv(const std::filesystem::path& file, const Dataset& ds) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write '" + file.string() + "'");
  out << to_csv(ds);
}

std::uint64_t content_hash(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_csv(ds)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

nlohmann::json manifest(const Dataset& ds) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(content_hash(ds)));
  return {{"provenance", ds.provenance},
          {"samples", ds.size()},
          {"input_channels", ds.input_channels()},
          {"output_channels", ds.output_channels()},
          {"content_hash", std::string(hex)}};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double ratio,
                                                                            std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(Errc::split, "split ratio must lie in (0, 1)");
  if (n < 2) throw Error(Errc::split, "splitting needs at least two samples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = derived_rng(seed, 0x53504c4954ull);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  return {std::vector<std::size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)),
          std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end())};
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio, std::uint64_t seed) {
  const auto [tr, te] = split_indices(ds.size(), ratio, seed);
  Dataset a, b;
  a.provenance = b.provenance = ds.provenance;
  a.provenance["split"] = {{"part", "train"}, {"ratio", ratio}, {"seed", seed}};
  b.provenance["split"] = {{"part", "test"}, {"ratio", ratio}, {"seed", seed}};
  for (auto i : tr) a.samples.push_back(ds.samples[i]);
  for (auto i : te) b.samples.push_back(ds.samples[i]);
  return {std::move(a), std::move(b)};
}

}  // namespace fame
