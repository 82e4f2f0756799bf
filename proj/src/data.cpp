#include "dode/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "dode/errors.hpp"
#include "dode/rng.hpp"

namespace dode {

const std::array<double, 256>& level_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int X = 0; X < 256; ++X) t[static_cast<std::size_t>(X)] = (X + 0.5 - 128.0) / 128.0;
    return t;
  }();
  return table;
}

double level_value(int X) {
  if (X < 0 || X > 255) throw InvalidInput("level_value: level outside 0..255");
  return level_table()[static_cast<std::size_t>(X)];
}

int quantize(double x) {
  if (std::isnan(x)) throw InvalidInput("quantize: NaN input");
  x = std::clamp(x, -1.0, 1.0 - 1.0 / 128.0);
  return std::clamp(static_cast<int>(std::floor((x + 1.0) * 128.0)), 0, 255);
}

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::Gauss: return "gauss";
    case DatasetKind::GaussMixture: return "gauss-mixture";
    case DatasetKind::Checkerboard2D: return "checkerboard";
    case DatasetKind::Discrete256: return "discrete256";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "gauss") return DatasetKind::Gauss;
  if (s == "gauss-mixture" || s == "mixture") return DatasetKind::GaussMixture;
  if (s == "checkerboard") return DatasetKind::Checkerboard2D;
  if (s == "discrete256") return DatasetKind::Discrete256;
  throw InvalidInput("data: unknown dataset kind '" + std::string(s) + "'");
}

DatasetSpec default_mixture_spec() {
  DatasetSpec s;
  s.kind = DatasetKind::GaussMixture;
  s.d = 2;
  s.components = {{0.5, (Vec(2) << -0.5, -0.5).finished(), 0.2}, {0.5, (Vec(2) << 0.5, 0.5).finished(), 0.2}};
  return s;
}

namespace {

void validate_components(const std::vector<MixtureComponent>& comps, Eigen::Index d) {
  if (comps.empty()) throw InvalidInput("generate: mixture needs at least one component");
  double sum = 0;
  for (const auto& c : comps) {
    if (!(c.weight > 0) || !std::isfinite(c.weight)) throw InvalidInput("generate: mixture weights must be positive");
    if (c.mean.size() != d) throw InvalidInput("generate: component mean has wrong dimension");
    if (!(c.std >= 0)) throw InvalidInput("generate: component std must be >= 0");
    sum += c.weight;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("generate: mixture weights must sum to 1");
}

Vec draw_checkerboard(Rng& rng) {
  for (;;) {
    const double a = 2 * uniform01(rng) - 1, b = 2 * uniform01(rng) - 1;
    const int i = static_cast<int>(std::floor((a + 1) * 2)), j = static_cast<int>(std::floor((b + 1) * 2));
    if ((i + j) % 2 == 0) return (Vec(2) << a, b).finished();
  }
}

}  // namespace

std::optional<GaussianMixtureOracle> Dataset::oracle(const LogSnrSchedule& s) const {
  switch (spec.kind) {
    case DatasetKind::Gauss: return GaussianMixtureOracle::gaussian(s, spec.d, spec.s0);
    case DatasetKind::GaussMixture: return GaussianMixtureOracle(s, spec.components);
    default: return std::nullopt;
  }
}

Dataset generate(const DatasetSpec& spec, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw InvalidInput("generate: n must be >= 1");
  if (spec.d < 1) throw InvalidInput("generate: d must be >= 1");
  Dataset ds;
  ds.spec = spec;
  ds.samples.resize(n, spec.d);
  Rng rng = task_rng(seed, 0);
  DatasetKind source = spec.kind;
  if (spec.kind == DatasetKind::Discrete256) source = parse_dataset_kind(spec.source);
  if (source == DatasetKind::Discrete256) throw InvalidInput("generate: discrete256 needs a continuous source");
  if (source == DatasetKind::GaussMixture) validate_components(spec.components, spec.d);
  if (source == DatasetKind::Gauss && !(spec.s0 > 0)) throw InvalidInput("generate: s0 must be > 0");
  if (source == DatasetKind::Checkerboard2D && spec.d != 2) throw InvalidInput("generate: checkerboard is 2-D");
  std::optional<GaussianMixtureOracle> mix;
  if (source == DatasetKind::GaussMixture) mix.emplace(LogSnrSchedule{}, spec.components);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec x;
    switch (source) {
      case DatasetKind::Gauss: x = spec.s0 * standard_normal(spec.d, rng); break;
      case DatasetKind::GaussMixture: x = mix->sample_data(rng); break;
      default: x = draw_checkerboard(rng); break;
    }
    ds.samples.row(i) = x.transpose();
  }
  if (spec.kind == DatasetKind::Discrete256) {
    IMat X(n, spec.d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < spec.d; ++j) {
        X(i, j) = quantize(ds.samples(i, j));
        ds.samples(i, j) = level_value(X(i, j));
      }
    ds.discrete = std::move(X);
  }
  return ds;
}

Dataset subset(const Dataset& ds, Eigen::Index begin, Eigen::Index end) {
  if (begin < 0 || end > ds.size() || begin >= end) throw InvalidInput("subset: bad range");
  Dataset out;
  out.spec = ds.spec;
  out.samples = ds.samples.middleRows(begin, end - begin);
  if (ds.discrete) out.discrete = ds.discrete->middleRows(begin, end - begin);
  return out;
}

namespace {

using nlohmann::json;

json spec_params(const DatasetSpec& s) {
  json j;
  j["s0"] = s.s0;
  j["source"] = s.source;
  json comps = json::array();
  for (const auto& c : s.components) {
    std::vector<double> m(c.mean.data(), c.mean.data() + c.mean.size());
    comps.push_back({{"weight", c.weight}, {"mean", m}, {"std", c.std}});
  }
  j["components"] = comps;
  return j;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string dataset_to_string(const Dataset& ds) {
  std::ostringstream os;
  const bool disc = ds.spec.kind == DatasetKind::Discrete256;
  if (disc && !ds.discrete) throw InvalidInput("save_dataset: discrete256 dataset without levels");
  os << "# dode-dataset v1 kind=" << to_string(ds.spec.kind) << " d=" << ds.dim() << " n=" << ds.size()
     << " params=" << spec_params(ds.spec).dump() << "\n";
  for (Eigen::Index j = 0; j < ds.dim(); ++j) os << (j ? "," : "") << (disc ? "X" : "x") << j;
  os << "\n";
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
      if (j) os << ',';
      if (disc) os << (*ds.discrete)(i, j);
      else os << fmt17(ds.samples(i, j));
    }
    os << "\n";
  }
  return os.str();
}

namespace {

struct Cursor {
  const std::string& s;
  std::size_t pos = 0;

  std::string_view line() {
    const std::size_t start = pos;
    const std::size_t nl = s.find('\n', pos);
    if (nl == std::string::npos) throw ParseError("dataset: truncated line", s.size());
    pos = nl + 1;
    return std::string_view(s).substr(start, nl - start);
  }
};

}  // namespace

Dataset dataset_from_string(const std::string& text) {
  Cursor c{text};
  const std::string_view header = c.line();
  const std::string_view magic = "# dode-dataset ";
  if (header.substr(0, magic.size()) != magic) throw ParseError("dataset: missing '# dode-dataset' header", 0);
  std::map<std::string, std::string> kv;
  std::string version;
  {
    std::string_view rest = header.substr(magic.size());
    std::size_t off = magic.size();
    bool first = true;
    while (!rest.empty()) {
      std::size_t sp = rest.find(' ');
      // params JSON has no spaces, so tokens split cleanly
      std::string_view tok = rest.substr(0, sp);
      if (first) {
        version = std::string(tok);
        first = false;
      } else {
        const std::size_t eq = tok.find('=');
        if (eq == std::string_view::npos) throw ParseError("dataset: malformed header token", off);
        kv[std::string(tok.substr(0, eq))] = std::string(tok.substr(eq + 1));
      }
      if (sp == std::string_view::npos) break;
      rest = rest.substr(sp + 1);
      off += sp + 1;
    }
  }
  if (version != "v1") throw UnsupportedVersion("dataset: unsupported format version '" + version + "'");
  for (const char* k : {"kind", "d"})
    if (!kv.count(k)) throw ParseError(std::string("dataset: header lacks ") + k, 0);
  Dataset ds;
  ds.spec.kind = parse_dataset_kind(kv["kind"]);
  long long d = 0, n = 0;
  try {
    d = std::stoll(kv["d"]);
    n = kv.count("n") ? std::stoll(kv["n"]) : -1;
  } catch (const std::exception&) {
    throw ParseError("dataset: bad d or n in header", 0);
  }
  if (d < 1 || n < -1 || (kv.count("n") && n < 0)) throw ParseError("dataset: bad d or n in header", 0);
  ds.spec.d = d;
  if (kv.count("params")) {
    json p;
    try {
      p = json::parse(kv["params"]);
      ds.spec.s0 = p.at("s0").get<double>();
      ds.spec.source = p.at("source").get<std::string>();
      for (const auto& jc : p.at("components")) {
        const auto m = jc.at("mean").get<std::vector<double>>();
        ds.spec.components.push_back(
            {jc.at("weight").get<double>(), Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size())),
             jc.at("std").get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("dataset: bad params: ") + e.what(), 0);
    }
  }
  const std::size_t colpos = c.pos;
  const std::string_view cols = c.line();
  if (static_cast<long long>(std::count(cols.begin(), cols.end(), ',')) != d - 1)
    throw ParseError("dataset: column header does not match d", colpos);
  if (n < 0) {
    // no declared count: one row per remaining line
    if (c.pos < text.size() && text.back() != '\n') throw ParseError("dataset: truncated line", text.size());
    n = static_cast<long long>(std::count(text.begin() + static_cast<std::ptrdiff_t>(c.pos), text.end(), '\n'));
  }
  const bool disc = ds.spec.kind == DatasetKind::Discrete256;
  ds.samples.resize(n, d);
  IMat X;
  if (disc) X.resize(n, d);
  for (long long i = 0; i < n; ++i) {
    if (c.pos >= text.size()) throw ParseError("dataset: truncated (expected " + std::to_string(n) + " rows)", c.pos);
    const std::size_t lp = c.pos;
    const std::string_view row = c.line();
    std::size_t p = 0;
    for (long long j = 0; j < d; ++j) {
      const std::size_t q = j + 1 < d ? row.find(',', p) : row.size();
      if (q == std::string_view::npos) throw ParseError("dataset: too few columns", lp + p);
      const std::string field(row.substr(p, q - p));
      if (disc) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc() || ptr != field.data() + field.size() || v < 0 || v > 255)
          throw ParseError("dataset: bad level", lp + p);
        X(i, j) = v;
        ds.samples(i, j) = level_value(v);
      } else {
        char* end = nullptr;
        const double v = std::strtod(field.c_str(), &end);
        if (field.empty() || end != field.c_str() + field.size() || !std::isfinite(v))
          throw ParseError("dataset: bad number", lp + p);
        ds.samples(i, j) = v;
      }
      p = q + 1;
    }
    if (p < row.size()) throw ParseError("dataset: too many columns", lp + p);
  }
  if (c.pos != text.size()) throw ParseError("dataset: trailing content after declared rows", c.pos);
  if (disc) ds.discrete = std::move(X);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("save_dataset: cannot open " + path);
  const std::string s = dataset_to_string(ds);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw InvalidInput("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("load_dataset: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return dataset_from_string(ss.str());
}

}  // namespace dode
