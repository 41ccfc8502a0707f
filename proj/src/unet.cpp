#include "sarsgs/unet.hpp"

#include "sarsgs/binary_io.hpp"
#include "sarsgs/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>

namespace sarsgs {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

constexpr double kGroupNormEps = 1e-5;
constexpr char   kMagic[4] = {'S', 'G', 'S', 'W'};

// Maps dOut to dIn for one recorded operation.
using Back = std::function<Tensor(Tensor const &)>;
using Tape = std::vector<Back>;

Tensor run_back(Tape const &tape, Tensor g)
{
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) { g = (*it)(g); }
  return g;
}

Eigen::Map<RowMat const> as_matrix(Tensor const &t)
{
  return {t.data(), t.channels(), static_cast<Eigen::Index>(t.height()) * t.width()};
}

Eigen::Map<RowMat> as_matrix(Tensor &t)
{
  return {t.data(), t.channels(), static_cast<Eigen::Index>(t.height()) * t.width()};
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Vec silu(Vec const &v)
{
  return v.unaryExpr([](double a) { return a * sigmoid(a); });
}

struct Conv
{
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  Mat w; // cout × (cin·k·k), columns ordered (c, di, dj)
  Vec b;
};

struct Linear
{
  Mat w;
  Vec b;
};

struct ResLayer
{
  bool   conditioned = false;
  Vec    norm_w, norm_b; // unconditioned layers
  Linear ada;            // conditioned layers: (γ, β, α) stacked
  Conv   conv;
};

struct Block
{
  ResLayer l0, l1;
};

struct EncoderLevel
{
  std::vector<Block> blocks;
  Conv               down;
};

struct DecoderLevel
{
  Conv               up;
  Conv               fuse;
  std::vector<Block> blocks;
};

int out_size(int n, Conv const &c) { return (n + 2 * c.pad - c.k) / c.stride + 1; }

RowMat im2col(Tensor const &x, Conv const &c, int ho, int wo)
{
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(c.cin) * c.k * c.k, static_cast<Eigen::Index>(ho) * wo);
  for (int ch = 0; ch < c.cin; ++ch) {
    for (int di = 0; di < c.k; ++di) {
      for (int dj = 0; dj < c.k; ++dj) {
        double *row = cols.row((ch * c.k + di) * c.k + dj).data();
        for (int oi = 0; oi < ho; ++oi) {
          int const ii = oi * c.stride - c.pad + di;
          if (ii < 0 || ii >= x.height()) { continue; }
          for (int oj = 0; oj < wo; ++oj) {
            int const jj = oj * c.stride - c.pad + dj;
            if (jj >= 0 && jj < x.width()) { row[oi * wo + oj] = x(ch, ii, jj); }
          }
        }
      }
    }
  }
  return cols;
}

Tensor col2im(RowMat const &cols, Conv const &c, int h, int w, int ho, int wo)
{
  Tensor dx(c.cin, h, w);
  for (int ch = 0; ch < c.cin; ++ch) {
    for (int di = 0; di < c.k; ++di) {
      for (int dj = 0; dj < c.k; ++dj) {
        double const *row = cols.row((ch * c.k + di) * c.k + dj).data();
        for (int oi = 0; oi < ho; ++oi) {
          int const ii = oi * c.stride - c.pad + di;
          if (ii < 0 || ii >= h) { continue; }
          for (int oj = 0; oj < wo; ++oj) {
            int const jj = oj * c.stride - c.pad + dj;
            if (jj >= 0 && jj < w) { dx(ch, ii, jj) += row[oi * wo + oj]; }
          }
        }
      }
    }
  }
  return dx;
}

Tensor conv_forward(Conv const &c, Tensor const &x, Tape *tape)
{
  int const h = x.height(), w = x.width();
  int const ho = out_size(h, c), wo = out_size(w, c);
  Tensor    y(c.cout, ho, wo);
  RowMat    out = c.w * im2col(x, c, ho, wo);
  out.colwise() += c.b;
  as_matrix(y) = out;
  if (tape) {
    tape->push_back([&c, h, w, ho, wo](Tensor const &g) {
      RowMat const dcols = c.w.transpose() * as_matrix(g);
      return col2im(dcols, c, h, w, ho, wo);
    });
  }
  return y;
}

struct NormCache
{
  Tensor              xhat;
  std::vector<double> inv_std;
};

NormCache group_norm(Tensor const &x, int groups)
{
  NormCache         cache{Tensor(x.channels(), x.height(), x.width()), std::vector<double>(groups)};
  std::size_t const n = x.size() / groups;
  for (int g = 0; g < groups; ++g) {
    double const *src = x.data() + g * n;
    double const  mean = std::accumulate(src, src + n, 0.0) / n;
    double        var = 0.0;
    for (std::size_t k = 0; k < n; ++k) { var += (src[k] - mean) * (src[k] - mean); }
    var /= n;
    double const inv = 1.0 / std::sqrt(var + kGroupNormEps);
    cache.inv_std[g] = inv;
    double *dst = cache.xhat.data() + g * n;
    for (std::size_t k = 0; k < n; ++k) { dst[k] = (src[k] - mean) * inv; }
  }
  return cache;
}

Tensor group_norm_back(NormCache const &cache, Tensor const &dxhat)
{
  int const         groups = static_cast<int>(cache.inv_std.size());
  std::size_t const n = dxhat.size() / groups;
  Tensor            dx(dxhat.channels(), dxhat.height(), dxhat.width());
  for (int g = 0; g < groups; ++g) {
    double const *d = dxhat.data() + g * n;
    double const *xh = cache.xhat.data() + g * n;
    double        m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      m1 += d[k];
      m2 += d[k] * xh[k];
    }
    m1 /= n;
    m2 /= n;
    double *out = dx.data() + g * n;
    for (std::size_t k = 0; k < n; ++k) { out[k] = cache.inv_std[g] * (d[k] - m1 - xh[k] * m2); }
  }
  return dx;
}

// SiLU(scale_c · GN(x) + shift_c), the pre-activation shared by every layer and the head.
Tensor norm_act(Tensor const &x, int groups, Vec const &scale, Vec const &shift, Tape *tape)
{
  NormCache         cache = group_norm(x, groups);
  std::size_t const hw = static_cast<std::size_t>(x.height()) * x.width();
  Tensor            pre(x.channels(), x.height(), x.width());
  Tensor            out(x.channels(), x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    for (std::size_t p = 0; p < hw; ++p) {
      std::size_t const k = c * hw + p;
      pre[k] = scale[c] * cache.xhat[k] + shift[c];
      out[k] = pre[k] * sigmoid(pre[k]);
    }
  }
  if (tape) {
    tape->push_back([cache = std::move(cache), pre = std::move(pre), scale, hw](Tensor const &g) {
      Tensor dxhat(g.channels(), g.height(), g.width());
      for (int c = 0; c < g.channels(); ++c) {
        for (std::size_t p = 0; p < hw; ++p) {
          std::size_t const k = c * hw + p;
          double const      s = sigmoid(pre[k]);
          dxhat[k] = g[k] * s * (1.0 + pre[k] * (1.0 - s)) * scale[c];
        }
      }
      return group_norm_back(cache, dxhat);
    });
  }
  return out;
}

// x + gate_c · conv(norm_act(x)).
Tensor res_layer(ResLayer const &layer, Tensor const &x, Vec const &temb_act, int groups, Tape *tape)
{
  int const C = x.channels();
  Vec       scale, shift, gate;
  if (layer.conditioned) {
    Vec const m = layer.ada.w * temb_act + layer.ada.b;
    scale = m.segment(0, C);
    shift = m.segment(C, C);
    gate = m.segment(2 * C, C);
  } else {
    scale = layer.norm_w;
    shift = layer.norm_b;
    gate = Vec::Ones(C);
  }
  Tape   inner;
  Tape  *inner_tape = tape ? &inner : nullptr;
  Tensor branch = conv_forward(layer.conv, norm_act(x, groups, scale, shift, inner_tape), inner_tape);
  as_matrix(branch).array().colwise() *= gate.array();
  Tensor out = x;
  out += branch;
  if (tape) {
    tape->push_back([inner = std::move(inner), gate](Tensor const &g) {
      Tensor dbranch = g;
      as_matrix(dbranch).array().colwise() *= gate.array();
      Tensor dx = run_back(inner, std::move(dbranch));
      dx += g;
      return dx;
    });
  }
  return out;
}

Tensor run_blocks(std::vector<Block> const &blocks, Tensor h, Vec const &temb_act, int groups, Tape *tape)
{
  for (auto const &b : blocks) {
    h = res_layer(b.l0, h, temb_act, groups, tape);
    h = res_layer(b.l1, h, temb_act, groups, tape);
  }
  return h;
}

Tensor upsample2(Tensor const &x, Tape *tape)
{
  Tensor y(x.channels(), 2 * x.height(), 2 * x.width());
  for (int c = 0; c < x.channels(); ++c) {
    for (int i = 0; i < y.height(); ++i) {
      for (int j = 0; j < y.width(); ++j) { y(c, i, j) = x(c, i / 2, j / 2); }
    }
  }
  if (tape) {
    tape->push_back([](Tensor const &g) {
      Tensor dx(g.channels(), g.height() / 2, g.width() / 2);
      for (int c = 0; c < g.channels(); ++c) {
        for (int i = 0; i < g.height(); ++i) {
          for (int j = 0; j < g.width(); ++j) { dx(c, i / 2, j / 2) += g(c, i, j); }
        }
      }
      return dx;
    });
  }
  return y;
}

Tensor concat(Tensor const &a, Tensor const &b)
{
  Tensor out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + a.size());
  return out;
}

std::pair<Tensor, Tensor> split(Tensor const &t, int first_channels)
{
  Tensor a(first_channels, t.height(), t.width());
  Tensor b(t.channels() - first_channels, t.height(), t.width());
  std::copy(t.values().begin(), t.values().begin() + a.size(), a.values().begin());
  std::copy(t.values().begin() + a.size(), t.values().end(), b.values().begin());
  return {std::move(a), std::move(b)};
}

Vec sinusoidal_embedding(int t, int dim)
{
  int const half = dim / 2;
  Vec       emb(dim);
  for (int k = 0; k < half; ++k) {
    double const freq = std::exp(-std::log(10000.0) * k / half);
    emb[k] = std::sin(t * freq);
    emb[half + k] = std::cos(t * freq);
  }
  return emb;
}

std::int64_t element_count(std::vector<std::int64_t> const &shape)
{
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

} // namespace

// ---------------------------------------------------------------------------
// Architecture

void UnetArch::validate() const
{
  if (in_channels < 1 || base_width < 1 || groups < 1) {
    throw ManifestError("architecture widths and group count must be positive");
  }
  if (base_width % groups != 0) { throw ManifestError("base_width must be divisible by groups"); }
  if (time_dim < 2 || time_dim % 2 != 0) { throw ManifestError("time_dim must be a positive even number"); }
  if (decoder_depths.size() != encoder_depths.size()) {
    throw ManifestError("encoder and decoder must have the same number of levels");
  }
  auto negative = [](int d) { return d < 0; };
  if (middle_depth < 0 || std::any_of(encoder_depths.begin(), encoder_depths.end(), negative) ||
      std::any_of(decoder_depths.begin(), decoder_depths.end(), negative)) {
    throw ManifestError("block depths must be non-negative");
  }
}

nlohmann::json UnetArch::to_json() const
{
  return {{"in_channels", in_channels},       {"base_width", base_width},
          {"groups", groups},                 {"time_dim", time_dim},
          {"encoder_depths", encoder_depths}, {"middle_depth", middle_depth},
          {"decoder_depths", decoder_depths}, {"condition_first", condition_first}};
}

UnetArch UnetArch::from_json(nlohmann::json const &j)
{
  UnetArch a;
  a.in_channels = j.value("in_channels", a.in_channels);
  a.base_width = j.value("base_width", a.base_width);
  a.groups = j.value("groups", a.groups);
  a.time_dim = j.value("time_dim", a.time_dim);
  a.encoder_depths = j.value("encoder_depths", a.encoder_depths);
  a.middle_depth = j.value("middle_depth", a.middle_depth);
  a.decoder_depths = j.value("decoder_depths", a.decoder_depths);
  a.condition_first = j.value("condition_first", a.condition_first);
  return a;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> UnetArch::tensor_manifest() const
{
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> m;
  auto add = [&m](std::string name, std::vector<std::int64_t> shape) { m.emplace_back(std::move(name), std::move(shape)); };
  auto conv = [&add](std::string const &p, std::int64_t cout, std::int64_t cin, std::int64_t k) {
    add(p + ".weight", {cout, cin, k, k});
    add(p + ".bias", {cout});
  };
  auto block = [&](std::string const &p, std::int64_t w) {
    for (int l = 0; l < 2; ++l) {
      std::string const lp = p + ".l" + std::to_string(l);
      if (l == 1 || condition_first) {
        add(lp + ".ada.weight", {3 * w, time_dim});
        add(lp + ".ada.bias", {3 * w});
      } else {
        add(lp + ".norm.weight", {w});
        add(lp + ".norm.bias", {w});
      }
      conv(lp + ".conv", w, w, 3);
    }
  };

  std::int64_t const B = base_width;
  int const          E = downsamples();
  conv("stem", B, in_channels, 3);
  add("time_mlp.0.weight", {time_dim, time_dim});
  add("time_mlp.0.bias", {time_dim});
  add("time_mlp.2.weight", {time_dim, time_dim});
  add("time_mlp.2.bias", {time_dim});
  for (int i = 0; i < E; ++i) {
    std::int64_t const w = B << i;
    for (int b = 0; b < encoder_depths[i]; ++b) { block("enc." + std::to_string(i) + ".blocks." + std::to_string(b), w); }
    conv("enc." + std::to_string(i) + ".down", 2 * w, w, 3);
  }
  for (int b = 0; b < middle_depth; ++b) { block("mid.blocks." + std::to_string(b), B << E); }
  for (int j = 0; j < E; ++j) {
    std::int64_t const w = B << (E - 1 - j);
    std::string const  p = "dec." + std::to_string(j);
    conv(p + ".up", w, 2 * w, 3);
    conv(p + ".fuse", w, 2 * w, 1);
    for (int b = 0; b < decoder_depths[j]; ++b) { block(p + ".blocks." + std::to_string(b), w); }
  }
  add("head.norm.weight", {B});
  add("head.norm.bias", {B});
  conv("head.conv", in_channels, B, 3);
  return m;
}

// ---------------------------------------------------------------------------
// Container

void validate_weights(WeightFile const &file)
{
  file.arch.validate();
  auto const &ab = file.alpha_bar;
  if (ab.empty()) { throw ManifestError("alpha_bar schedule is empty"); }
  for (std::size_t t = 0; t < ab.size(); ++t) {
    if (!std::isfinite(ab[t]) || !(ab[t] > 0.0 && ab[t] < 1.0)) {
      throw ManifestError("alpha_bar values must lie in (0, 1)");
    }
    if (t > 0 && !(ab[t] < ab[t - 1])) { throw ManifestError("alpha_bar must be strictly decreasing in t"); }
  }
  std::map<std::string, std::vector<std::int64_t>> expected;
  for (auto &[name, shape] : file.arch.tensor_manifest()) { expected.emplace(name, shape); }
  std::set<std::string> seen;
  for (auto const &t : file.tensors) {
    auto const it = expected.find(t.name);
    if (it == expected.end()) { throw ManifestError("unexpected tensor '" + t.name + "'"); }
    if (!seen.insert(t.name).second) { throw ManifestError("duplicate tensor '" + t.name + "'"); }
    if (t.shape != it->second) { throw ManifestError("tensor '" + t.name + "' has the wrong shape"); }
    if (static_cast<std::int64_t>(t.values.size()) != element_count(t.shape)) {
      throw ManifestError("tensor '" + t.name + "' holds the wrong number of values");
    }
  }
  for (auto const &[name, shape] : expected) {
    if (!seen.count(name)) { throw ManifestError("missing tensor '" + name + "'"); }
  }
}

WeightFile read_sgsw(std::filesystem::path const &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) { throw IoError("cannot open " + path.string()); }
  std::string const where = path.string();

  char magic[4];
  if (!is.read(magic, 4)) { throw IoError(where + ": file ends inside the preamble"); }
  if (std::memcmp(magic, kMagic, 4) != 0) { throw FormatError(where + ": not an SGSW file"); }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  if (!detail::read_le(is, version)) { throw IoError(where + ": file ends inside the preamble"); }
  if (version != kSgswVersion) { throw FormatError(where + ": unsupported SGSW version " + std::to_string(version)); }
  if (!detail::read_le(is, header_len)) { throw IoError(where + ": file ends inside the preamble"); }
  if (header_len > (std::uint64_t{1} << 31)) { throw FormatError(where + ": implausible header length"); }
  std::string header(header_len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_len))) {
    throw IoError(where + ": file ends inside the header");
  }
  std::vector<char> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  WeightFile file;
  try {
    auto doc = nlohmann::json::parse(header);
    file.arch = UnetArch::from_json(doc.at("arch"));
    file.alpha_bar = doc.at("alpha_bar").get<std::vector<double>>();
    for (auto const &entry : doc.at("tensors")) {
      WeightTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      auto const dtype = entry.at("dtype").get<std::string>();
      auto const offset = entry.at("offset").get<std::uint64_t>();
      auto const nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (dtype != "f32") { throw ManifestError(where + ": tensor '" + t.name + "' has dtype " + dtype); }
      std::int64_t const count = element_count(t.shape);
      if (count < 0 || nbytes != static_cast<std::uint64_t>(count) * 4) {
        throw ManifestError(where + ": tensor '" + t.name + "' declares " + std::to_string(nbytes) +
                            " bytes for its shape");
      }
      if (offset > payload.size() || nbytes > payload.size() - offset) {
        throw IoError(where + ": payload ends before tensor '" + t.name + "'");
      }
      t.values.resize(count);
      auto const *bytes = reinterpret_cast<unsigned char const *>(payload.data()) + offset;
      for (std::int64_t k = 0; k < count; ++k) { t.values[k] = detail::from_le_bytes<float>(bytes + 4 * k); }
      file.tensors.push_back(std::move(t));
    }
    for (auto const &[key, value] : doc.items()) {
      if (key != "arch" && key != "alpha_bar" && key != "tensors") { file.extra[key] = value; }
    }
  } catch (nlohmann::json::exception const &e) {
    throw FormatError(where + ": malformed header: " + e.what());
  }
  validate_weights(file);
  return file;
}

void write_sgsw(std::filesystem::path const &path, WeightFile const &file)
{
  validate_weights(file);
  nlohmann::json header = file.extra;
  header["arch"] = file.arch.to_json();
  header["alpha_bar"] = file.alpha_bar;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (auto const &t : file.tensors) {
    std::uint64_t const nbytes = 4 * t.values.size();
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  std::string const text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) { throw IoError("cannot open " + path.string() + " for writing"); }
  os.write(kMagic, 4);
  detail::write_le(os, kSgswVersion);
  detail::write_le(os, static_cast<std::uint64_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto const &t : file.tensors) {
    for (float const v : t.values) { detail::write_le(os, v); }
  }
  if (!os) { throw IoError("write to " + path.string() + " failed"); }
}

// ---------------------------------------------------------------------------
// Inference

struct NeuralDenoiser::Impl
{
  UnetArch                  arch;
  std::vector<double>       alpha_bar;
  Conv                      stem;
  Linear                    time0, time2;
  std::vector<EncoderLevel> enc;
  std::vector<Block>        mid;
  std::vector<DecoderLevel> dec;
  Vec                       head_w, head_b;
  Conv                      head_conv;

  std::map<std::string, WeightTensor const *> named;

  WeightTensor const &get(std::string const &name) const { return *named.at(name); }

  Vec vector(std::string const &name) const
  {
    auto const &t = get(name);
    Vec         v(t.values.size());
    for (std::size_t k = 0; k < t.values.size(); ++k) { v[k] = t.values[k]; }
    return v;
  }

  Mat matrix(std::string const &name, Eigen::Index rows) const
  {
    auto const        &t = get(name);
    Eigen::Index const cols = static_cast<Eigen::Index>(t.values.size()) / rows;
    Mat                m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) { m(r, c) = t.values[r * cols + c]; }
    }
    return m;
  }

  Conv conv(std::string const &p, int stride, int pad) const
  {
    auto const &shape = get(p + ".weight").shape;
    Conv        c;
    c.cout = static_cast<int>(shape[0]);
    c.cin = static_cast<int>(shape[1]);
    c.k = static_cast<int>(shape[2]);
    c.stride = stride;
    c.pad = pad;
    c.w = matrix(p + ".weight", c.cout);
    c.b = vector(p + ".bias");
    return c;
  }

  Linear linear(std::string const &p) const
  {
    Linear l;
    l.b = vector(p + ".bias");
    l.w = matrix(p + ".weight", l.b.size());
    return l;
  }

  ResLayer layer(std::string const &p, bool conditioned) const
  {
    ResLayer l;
    l.conditioned = conditioned;
    if (conditioned) {
      l.ada = linear(p + ".ada");
    } else {
      l.norm_w = vector(p + ".norm.weight");
      l.norm_b = vector(p + ".norm.bias");
    }
    l.conv = conv(p + ".conv", 1, 1);
    return l;
  }

  std::vector<Block> blocks(std::string const &p, int depth) const
  {
    std::vector<Block> out;
    for (int b = 0; b < depth; ++b) {
      std::string const bp = p + ".blocks." + std::to_string(b);
      out.push_back({layer(bp + ".l0", arch.condition_first), layer(bp + ".l1", true)});
    }
    return out;
  }

  explicit Impl(WeightFile const &file)
    : arch(file.arch)
    , alpha_bar(file.alpha_bar)
  {
    validate_weights(file);
    for (auto const &t : file.tensors) { named[t.name] = &t; }
    stem = conv("stem", 1, 1);
    time0 = linear("time_mlp.0");
    time2 = linear("time_mlp.2");
    int const E = arch.downsamples();
    for (int i = 0; i < E; ++i) {
      std::string const p = "enc." + std::to_string(i);
      enc.push_back({blocks(p, arch.encoder_depths[i]), conv(p + ".down", 2, 1)});
    }
    mid = blocks("mid", arch.middle_depth);
    for (int j = 0; j < E; ++j) {
      std::string const p = "dec." + std::to_string(j);
      dec.push_back({conv(p + ".up", 1, 1), conv(p + ".fuse", 1, 0), blocks(p, arch.decoder_depths[j])});
    }
    head_w = vector("head.norm.weight");
    head_b = vector("head.norm.bias");
    head_conv = conv("head.conv", 1, 1);
    named.clear(); // the WeightFile is not retained
  }

  void check_input(Tensor const &x) const
  {
    int const step = 1 << arch.downsamples();
    if (x.channels() != arch.in_channels) {
      throw DimensionError("network expects " + std::to_string(arch.in_channels) + " input channels");
    }
    if (x.height() < 1 || x.width() < 1 || x.height() % step != 0 || x.width() % step != 0) {
      throw DimensionError("spatial size " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                           " is not divisible by " + std::to_string(step));
    }
  }

  // Forward pass; when cotangent is given, also returns (∂out/∂x)^T cotangent in *grad.
  Tensor run(Tensor const &x, int t, Tensor const *cotangent, Tensor *grad) const
  {
    check_input(x);
    if (t < 1 || t > static_cast<int>(alpha_bar.size())) { throw ParameterError("timestep out of range"); }
    bool const record = cotangent != nullptr;
    int const  E = arch.downsamples();
    int const  G = arch.groups;

    Vec const temb = time2.w * silu(time0.w * sinusoidal_embedding(t, arch.time_dim) + time0.b) + time2.b;
    Vec const temb_act = silu(temb);

    Tape                stem_t, mid_t, head_t;
    std::vector<Tape>   enc_t(E), down_t(E), up_t(E), fuse_t(E), dec_t(E);
    std::vector<Tensor> skips;

    Tensor h = conv_forward(stem, x, record ? &stem_t : nullptr);
    for (int i = 0; i < E; ++i) {
      h = run_blocks(enc[i].blocks, std::move(h), temb_act, G, record ? &enc_t[i] : nullptr);
      skips.push_back(h);
      h = conv_forward(enc[i].down, h, record ? &down_t[i] : nullptr);
    }
    h = run_blocks(mid, std::move(h), temb_act, G, record ? &mid_t : nullptr);
    for (int j = 0; j < E; ++j) {
      int const i = E - 1 - j;
      h = upsample2(h, record ? &up_t[j] : nullptr);
      h = conv_forward(dec[j].up, h, record ? &up_t[j] : nullptr);
      h = conv_forward(dec[j].fuse, concat(h, skips[i]), record ? &fuse_t[j] : nullptr);
      h = run_blocks(dec[j].blocks, std::move(h), temb_act, G, record ? &dec_t[j] : nullptr);
    }
    h = norm_act(h, G, head_w, head_b, record ? &head_t : nullptr);
    Tensor out = conv_forward(head_conv, h, record ? &head_t : nullptr);

    if (record) {
      if (!cotangent->same_shape(out)) { throw DimensionError("cotangent shape differs from output shape"); }
      std::vector<Tensor> skip_grads(E);
      Tensor              g = run_back(head_t, *cotangent);
      for (int j = E - 1; j >= 0; --j) {
        int const i = E - 1 - j;
        g = run_back(dec_t[j], std::move(g));
        g = run_back(fuse_t[j], std::move(g));
        auto [g_up, g_skip] = split(g, dec[j].up.cout);
        skip_grads[i] = std::move(g_skip);
        g = run_back(up_t[j], std::move(g_up));
      }
      g = run_back(mid_t, std::move(g));
      for (int i = E - 1; i >= 0; --i) {
        g = run_back(down_t[i], std::move(g));
        g += skip_grads[i];
        g = run_back(enc_t[i], std::move(g));
      }
      *grad = run_back(stem_t, std::move(g));
    }
    return out;
  }
};

NeuralDenoiser::NeuralDenoiser(WeightFile const &file)
  : impl_(std::make_unique<Impl>(file))
{
}

NeuralDenoiser::~NeuralDenoiser() = default;
NeuralDenoiser::NeuralDenoiser(NeuralDenoiser &&) noexcept = default;
NeuralDenoiser &NeuralDenoiser::operator=(NeuralDenoiser &&) noexcept = default;

UnetArch const &NeuralDenoiser::arch() const { return impl_->arch; }

int NeuralDenoiser::timestep_for(double alpha_bar) const
{
  check_alpha_bar(alpha_bar);
  auto const &ab = impl_->alpha_bar;
  std::size_t best = 0;
  for (std::size_t t = 1; t < ab.size(); ++t) {
    if (std::abs(ab[t] - alpha_bar) < std::abs(ab[best] - alpha_bar)) { best = t; }
  }
  return static_cast<int>(best) + 1;
}

Tensor NeuralDenoiser::forward(Tensor const &x, int t) const { return impl_->run(x, t, nullptr, nullptr); }

Tensor NeuralDenoiser::predict_noise(Tensor const &x, double alpha_bar) const
{
  return impl_->run(x, timestep_for(alpha_bar), nullptr, nullptr);
}

Tensor NeuralDenoiser::noise_vjp(Tensor const &x, double alpha_bar, Tensor const &v) const
{
  Tensor grad;
  impl_->run(x, timestep_for(alpha_bar), &v, &grad);
  return grad;
}

std::vector<double> NeuralDenoiser::training_alpha_bars() const { return impl_->alpha_bar; }

double NeuralDenoiser::clean_alpha_bar() const { return impl_->alpha_bar.front(); }

NeuralDenoiser load_weights(std::filesystem::path const &path) { return NeuralDenoiser(read_sgsw(path)); }

} // namespace sarsgs
