#include "support.hpp"

#include "sarsgs/error.hpp"
#include "sarsgs/unet.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

using namespace sarsgs;

namespace {

WeightFile zero_weights(UnetArch const &arch)
{
  WeightFile f;
  f.arch = arch;
  f.alpha_bar = linear_beta_alpha_bars(20);
  for (auto const &[name, shape] : arch.tensor_manifest()) {
    std::int64_t n = 1;
    for (auto d : shape) { n *= d; }
    f.tensors.push_back({name, shape, std::vector<float>(n, 0.0f)});
  }
  return f;
}

UnetArch tiny_arch()
{
  UnetArch a;
  a.base_width = 4;
  a.groups = 2;
  a.time_dim = 8;
  a.encoder_depths = {1};
  a.middle_depth = 1;
  a.decoder_depths = {1};
  return a;
}

WeightFile random_weights(UnetArch const &arch, std::uint64_t seed)
{
  WeightFile f = zero_weights(arch);
  Rng        rng(seed);
  for (auto &t : f.tensors) {
    for (auto &v : t.values) { v = static_cast<float>(0.3 * rng.normal()); }
  }
  return f;
}

Tensor random_tensor(int c, int h, int w, std::uint64_t seed)
{
  Rng    rng(seed);
  Tensor t(c, h, w);
  for (std::size_t k = 0; k < t.size(); ++k) { t[k] = rng.normal(); }
  return t;
}

// Splits an SGSW file, lets the caller edit the header, and reassembles it.
std::string edit_header(std::string const &bytes, std::function<void(nlohmann::json &)> const &fn)
{
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  auto doc = nlohmann::json::parse(bytes.substr(16, len));
  fn(doc);
  std::string const header = doc.dump();
  std::uint64_t     n = header.size();
  std::string       out = bytes.substr(0, 8);
  out.append(reinterpret_cast<char const *>(&n), 8);
  return out + header + bytes.substr(16 + len);
}

void put(std::filesystem::path const &p, std::string const &s) { std::ofstream(p, std::ios::binary) << s; }

double check_fixture(std::string const &stem)
{
  NeuralDenoiser const net = load_weights(testing::fixture(stem + ".sgsw"));
  auto const           ref = nlohmann::json::parse(testing::slurp(testing::fixture(stem + "_reference.json")));
  auto const           shape = ref.at("shape").get<std::vector<int>>();
  double               worst = 0.0;
  for (auto const &c : ref.at("cases")) {
    auto const in = c.at("input").get<std::vector<double>>();
    auto const want = c.at("output").get<std::vector<double>>();
    Tensor     x(shape[0], shape[1], shape[2]);
    for (std::size_t k = 0; k < x.size(); ++k) { x[k] = in[k]; }
    Tensor const y = net.forward(x, c.at("t").get<int>());
    REQUIRE(y.size() == want.size());
    for (std::size_t k = 0; k < y.size(); ++k) { worst = std::max(worst, std::abs(y[k] - want[k])); }
  }
  return worst;
}

} // namespace

TEST_CASE("zero weights give a zero prediction")
{
  NeuralDenoiser const net(zero_weights(UnetArch{}));
  Tensor const         x = random_tensor(2, 32, 32, 1);
  Tensor const         e = net.predict_noise(x, 0.5);
  CHECK(e.channels() == 2);
  CHECK(e.height() == 32);
  CHECK(e.width() == 32);
  CHECK(e.squared_norm() == 0.0);
}

TEST_CASE("default architecture manifest")
{
  UnetArch const a;
  auto const     m = a.tensor_manifest();
  CHECK(m.front().first == "stem.weight");
  CHECK(m.front().second == std::vector<std::int64_t>{32, 2, 3, 3});
  CHECK(m.back().first == "head.conv.bias");
  auto find = [&](std::string const &n) {
    for (auto const &[name, shape] : m) {
      if (name == n) { return shape; }
    }
    return std::vector<std::int64_t>{};
  };
  CHECK(find("mid.blocks.3.l1.ada.weight") == std::vector<std::int64_t>{3 * 128, 128});
  CHECK(find("enc.1.down.weight") == std::vector<std::int64_t>{128, 64, 3, 3});
  CHECK(find("dec.0.fuse.weight") == std::vector<std::int64_t>{64, 128, 1, 1});
  CHECK(find("enc.0.blocks.4.l0.norm.weight") == std::vector<std::int64_t>{32});
  CHECK(find("enc.0.blocks.5.l0.norm.weight").empty());
}

TEST_CASE("forward matches the reference implementation")
{
  CHECK(check_fixture("tiny_unet") < 1e-5);
  CHECK(check_fixture("tiny_unet_cond") < 1e-5);
}

TEST_CASE("SGSW round trip is bit-identical")
{
  auto const dir = testing::scratch_dir("sgsw");
  WeightFile f = random_weights(tiny_arch(), 3);
  f.extra["optimizer"] = {{"lr", 2e-4}};
  write_sgsw(dir / "a.sgsw", f);
  WeightFile const back = read_sgsw(dir / "a.sgsw");
  CHECK(back.alpha_bar == f.alpha_bar);
  CHECK(back.extra == f.extra);
  CHECK(back.arch.to_json() == f.arch.to_json());
  REQUIRE(back.tensors.size() == f.tensors.size());
  for (std::size_t i = 0; i < f.tensors.size(); ++i) {
    CHECK(back.tensors[i].name == f.tensors[i].name);
    CHECK(back.tensors[i].shape == f.tensors[i].shape);
    CHECK(std::memcmp(back.tensors[i].values.data(), f.tensors[i].values.data(), 4 * f.tensors[i].values.size()) ==
          0);
  }
  write_sgsw(dir / "b.sgsw", back);
  CHECK(testing::slurp(dir / "a.sgsw") == testing::slurp(dir / "b.sgsw"));
}

TEST_CASE("SGSW rejects damaged containers")
{
  auto const dir = testing::scratch_dir("sgsw_bad");
  write_sgsw(dir / "ok.sgsw", random_weights(tiny_arch(), 4));
  std::string const bytes = testing::slurp(dir / "ok.sgsw");

  std::string magic = bytes;
  magic[1] = 'Q';
  put(dir / "magic.sgsw", magic);
  CHECK_THROWS_AS(read_sgsw(dir / "magic.sgsw"), FormatError);

  std::string version = bytes;
  version[4] = 2;
  put(dir / "version.sgsw", version);
  CHECK_THROWS_AS(read_sgsw(dir / "version.sgsw"), FormatError);

  put(dir / "nbytes.sgsw", edit_header(bytes, [](nlohmann::json &h) { h["tensors"][0]["nbytes"] = 4; }));
  CHECK_THROWS_AS(read_sgsw(dir / "nbytes.sgsw"), ManifestError);

  put(dir / "short.sgsw", bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(read_sgsw(dir / "short.sgsw"), IoError);

  put(dir / "missing.sgsw", edit_header(bytes, [](nlohmann::json &h) { h["tensors"].erase(3); }));
  CHECK_THROWS_AS(read_sgsw(dir / "missing.sgsw"), ManifestError);

  put(dir / "shape.sgsw", edit_header(bytes, [](nlohmann::json &h) {
        auto &t = h["tensors"][0];
        t["shape"] = {t["shape"][1], t["shape"][0], t["shape"][2], t["shape"][3]};
      }));
  CHECK_THROWS_AS(read_sgsw(dir / "shape.sgsw"), ManifestError);

  put(dir / "schedule.sgsw", edit_header(bytes, [](nlohmann::json &h) { h["alpha_bar"][2] = 1.5; }));
  CHECK_THROWS_AS(read_sgsw(dir / "schedule.sgsw"), ManifestError);

  put(dir / "header.sgsw", edit_header(bytes, [](nlohmann::json &h) { h.erase("arch"); }));
  CHECK_THROWS_AS(read_sgsw(dir / "header.sgsw"), FormatError);

  CHECK_THROWS_AS(read_sgsw(dir / "absent.sgsw"), IoError);
}

TEST_CASE("input gradient matches finite differences")
{
  NeuralDenoiser const net = load_weights(testing::fixture("tiny_unet_cond.sgsw"));
  Tensor const         x = random_tensor(2, 8, 8, 5);
  Tensor const         v = random_tensor(2, 8, 8, 6);
  double const         ab = net.training_alpha_bars()[20];
  Tensor const         g = net.noise_vjp(x, ab, v);
  double               err = 0.0, ref = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    Tensor a = x, b = x;
    a[k] += 1e-5;
    b[k] -= 1e-5;
    double const fd = (dot(net.predict_noise(a, ab), v) - dot(net.predict_noise(b, ab), v)) / 2e-5;
    err += (g[k] - fd) * (g[k] - fd);
    ref += fd * fd;
  }
  CHECK(std::sqrt(err / ref) < 1e-5);
  CHECK_THROWS_AS(net.noise_vjp(x, ab, Tensor(2, 4, 4)), DimensionError);
}

TEST_CASE("prediction is deterministic and checks its input")
{
  NeuralDenoiser const net(random_weights(tiny_arch(), 8));
  Tensor const         x = random_tensor(2, 6, 4, 9);
  Tensor const         a = net.predict_noise(x, 0.3);
  Tensor const         b = net.predict_noise(x, 0.3);
  CHECK(std::memcmp(a.data(), b.data(), 8 * a.size()) == 0);
  CHECK_THROWS_AS(net.predict_noise(random_tensor(2, 5, 4, 1), 0.3), DimensionError);
  CHECK_THROWS_AS(net.predict_noise(random_tensor(1, 6, 4, 1), 0.3), DimensionError);
  CHECK_THROWS_AS(net.forward(x, 0), ParameterError);
  CHECK_THROWS_AS(net.forward(x, 21), ParameterError);
}

TEST_CASE("timestep lookup")
{
  NeuralDenoiser const net(zero_weights(tiny_arch()));
  auto const           ab = net.training_alpha_bars();
  CHECK(net.clean_alpha_bar() == ab.front());
  CHECK(net.timestep_for(1.0) == 1);
  CHECK(net.timestep_for(1e-9) == 20);
  int last = 1;
  for (double a = 0.999; a > 0.5; a -= 0.01) {
    int const t = net.timestep_for(a);
    CHECK(t >= last);
    last = t;
  }
  for (std::size_t t = 0; t < ab.size(); ++t) { CHECK(net.timestep_for(ab[t]) == int(t) + 1); }
}

TEST_CASE("architecture validation")
{
  UnetArch a = tiny_arch();
  a.groups = 3;
  CHECK_THROWS_AS(a.validate(), ManifestError);
  a = tiny_arch();
  a.decoder_depths = {1, 1};
  CHECK_THROWS_AS(a.validate(), ManifestError);
  a = tiny_arch();
  a.time_dim = 7;
  CHECK_THROWS_AS(a.validate(), ManifestError);
  CHECK(UnetArch::from_json(tiny_arch().to_json()).to_json() == tiny_arch().to_json());
}
