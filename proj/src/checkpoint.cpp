#include "dode/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dode/errors.hpp"

namespace dode {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'O', 'D', 'E', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos, const char* what) {
  if (pos + sizeof(T) > in.size()) throw ParseError(std::string("checkpoint: truncated ") + what, in.size());
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

VelocityModel Checkpoint::model(bool use_ema) const {
  VelocityModel m(shape);
  const auto& src = use_ema ? ema : params;
  if (src.size() != m.param_count()) throw InvalidInput("checkpoint: parameter count does not match widths");
  m.params() = src;
  return m;
}

std::string checkpoint_to_bytes(const Checkpoint& c) {
  if (c.params.size() != c.shape.param_count() || c.ema.size() != c.params.size())
    throw InvalidInput("save_checkpoint: parameter blocks do not match the model widths");
  nlohmann::json h;
  h["format"] = "dode-checkpoint";
  h["version"] = kCheckpointVersion;
  std::vector<long long> widths;
  for (auto w : c.shape.widths()) widths.push_back(w);
  h["widths"] = widths;
  h["data_dim"] = c.shape.data_dim;
  h["embed_freqs"] = c.shape.embed_freqs;
  h["embed_dim"] = c.shape.embed_dim();
  h["activation"] = to_string(c.shape.activation);
  h["embed_gamma_min"] = c.shape.gamma_min;
  h["embed_gamma_max"] = c.shape.gamma_max;
  h["schedule"] = {{"kind", to_string(c.schedule.kind)},
                   {"gamma_min", c.schedule.gamma_min},
                   {"gamma_max", c.schedule.gamma_max}};
  h["seed"] = c.seed;
  h["iteration"] = c.iteration;
  h["param_count"] = c.params.size();
  h["blocks"] = {"params", "ema", "gamma_net"};
  h["gamma_net_count"] = c.gamma_net.size();
  h["gamma_net_hidden"] = c.gamma_net_hidden;
  const std::string header = h.dump();
  std::string out(kMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, header.size());
  out += header;
  for (double v : c.params) put<double>(out, v);
  for (double v : c.ema) put<double>(out, v);
  for (double v : c.gamma_net) put<double>(out, v);
  return out;
}

Checkpoint checkpoint_from_bytes(const std::string& in) {
  if (in.size() < 8 || std::memcmp(in.data(), kMagic, 8) != 0)
    throw ParseError("checkpoint: bad magic", 0);
  std::size_t pos = 8;
  const auto version = get<std::uint32_t>(in, pos, "version");
  if (version != kCheckpointVersion)
    throw UnsupportedVersion("checkpoint: unsupported format version " + std::to_string(version));
  get<std::uint32_t>(in, pos, "reserved");
  const auto hlen = get<std::uint64_t>(in, pos, "header length");
  if (pos + hlen > in.size()) throw ParseError("checkpoint: truncated header", in.size());
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: header is not JSON: ") + e.what(), pos);
  }
  const std::size_t hstart = pos;
  pos += hlen;
  Checkpoint c;
  try {
    if (h.at("version").get<std::uint32_t>() != kCheckpointVersion)
      throw UnsupportedVersion("checkpoint: header version mismatch");
    const auto widths = h.at("widths").get<std::vector<long long>>();
    if (widths.size() < 2) throw ParseError("checkpoint: need at least two widths", hstart);
    c.shape.data_dim = h.at("data_dim").get<long long>();
    c.shape.embed_freqs = h.at("embed_freqs").get<int>();
    c.shape.activation = parse_activation(h.at("activation").get<std::string>());
    c.shape.gamma_min = h.at("embed_gamma_min").get<double>();
    c.shape.gamma_max = h.at("embed_gamma_max").get<double>();
    c.shape.hidden.assign(widths.begin() + 1, widths.end() - 1);
    if (c.shape.widths() != std::vector<Eigen::Index>(widths.begin(), widths.end()))
      throw ParseError("checkpoint: widths inconsistent with data_dim/embed", hstart);
    const auto& s = h.at("schedule");
    c.schedule.kind = parse_schedule_kind(s.at("kind").get<std::string>());
    c.schedule.gamma_min = s.at("gamma_min").get<double>();
    c.schedule.gamma_max = s.at("gamma_max").get<double>();
    c.seed = h.at("seed").get<std::uint64_t>();
    c.iteration = h.at("iteration").get<std::uint64_t>();
    c.gamma_net_hidden = h.value("gamma_net_hidden", std::size_t{0});
    const auto pc = h.at("param_count").get<std::size_t>();
    if (pc != c.shape.param_count()) throw ParseError("checkpoint: param_count does not match widths", hstart);
    const auto gc = h.value("gamma_net_count", std::size_t{0});
    c.params.resize(pc);
    c.ema.resize(pc);
    c.gamma_net.resize(gc);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: bad header field: ") + e.what(), hstart);
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), hstart);
  }
  for (auto* block : {&c.params, &c.ema, &c.gamma_net})
    for (auto& v : *block) v = get<double>(in, pos, "parameter block");
  if (pos != in.size()) throw ParseError("checkpoint: trailing bytes", pos);
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string b = checkpoint_to_bytes(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("save_checkpoint: cannot open " + path);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!f) throw InvalidInput("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("load_checkpoint: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace dode
