#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "lftrack/checkpoint.hpp"
#include "lftrack/image_io.hpp"
#include "lftrack/light_field.hpp"
#include "lftrack/light_field_io.hpp"
#include "lftrack/rng.hpp"
#include "lftrack/threading.hpp"

using namespace lftrack;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  const fs::path dir = fs::temp_directory_path() / (std::string("lftrack_test_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

LightFieldVideo<float> random_lf(int T, int U, int V, int H, int W, int C, std::uint64_t seed) {
  LightFieldVideo<float> lf(T, U, V, H, W, C);
  Rng rng(seed);
  for (auto& s : lf.samples()) s = float(rng.uniform());
  return lf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("lf_core") {

TEST_CASE("rng is deterministic and distributions behave") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  double mn = 1.0, mx = 0.0, sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    mn = std::min(mn, u);
    mx = std::max(mx, u);
    sum += u;
  }
  CHECK(mn >= 0.0);
  CHECK(mx < 1.0);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));

  for (int i = 0; i < 1000; ++i) CHECK(std::abs(r.truncated_normal(0.02)) <= 0.04 + 1e-12);

  double gsum = 0.0;
  for (int i = 0; i < 20000; ++i) gsum += r.gumbel();
  // Gumbel(0,1) mean is the Euler-Mascheroni constant.
  CHECK(gsum / 20000 == doctest::Approx(0.5772).epsilon(0.05));

  CHECK(Rng::derive(1, 0) != Rng::derive(1, 1));
  CHECK(Rng::derive(1, 0) == Rng::derive(1, 0));
}

TEST_CASE("parallel_for matches sequential for any worker count") {
  std::vector<int> expect(1000);
  for (int i = 0; i < 1000; ++i) expect[std::size_t(i)] = i * i % 37;

  for (const char* threads : {"1", "3", "8"}) {
    setenv("LF_ESI_THREADS", threads, 1);
    std::vector<int> got(1000, -1);
    parallel_for(1000, [&](Index i) { got[std::size_t(i)] = int(i) * int(i) % 37; });
    CHECK(got == expect);
  }
  setenv("LF_ESI_THREADS", "0", 1);
  CHECK_THROWS_AS(worker_count(), ValidationError);
  setenv("LF_ESI_THREADS", "abc", 1);
  CHECK_THROWS_AS(worker_count(), ValidationError);
  setenv("LF_ESI_THREADS", "1", 1);
}

TEST_CASE("quantization is round-half-up and invertible at depth") {
  CHECK(quantize(0.5f, 8) == 128);  // 0.5*255 = 127.5 rounds up
  CHECK(quantize(0.f, 8) == 0);
  CHECK(quantize(1.f, 8) == 255);
  CHECK(quantize(1.f, 16) == 65535);
  CHECK(dequantize(65535, 16) == 1.0f);
  for (int q = 0; q <= 255; ++q) CHECK(quantize(dequantize(std::uint16_t(q), 8), 8) == q);
}

TEST_CASE("light field indexing is canonical (t,u,v,y,x,c) row-major") {
  LightFieldVideo<float> lf(2, 3, 4, 5, 6, 3);
  CHECK(lf.index(0, 0, 0, 0, 0, 0) == 0);
  CHECK(lf.index(0, 0, 0, 0, 0, 1) == 1);
  CHECK(lf.index(0, 0, 0, 0, 1, 0) == 3);
  CHECK(lf.index(0, 0, 0, 1, 0, 0) == 3 * 6);
  CHECK(lf.index(0, 0, 1, 0, 0, 0) == 3 * 6 * 5);
  CHECK(lf.index(0, 1, 0, 0, 0, 0) == 3 * 6 * 5 * 4);
  CHECK(lf.index(1, 0, 0, 0, 0, 0) == 3 * 6 * 5 * 4 * 3);
}

TEST_CASE("from_samples rejects non-finite values naming the index") {
  std::vector<float> s(2 * 3 * 3 * 2 * 2 * 1, 0.25f);
  s[17] = std::nanf("");
  CHECK_THROWS_WITH_AS(
      (void)LightFieldVideo<float>::from_samples(2, 3, 3, 2, 2, 1, s),
      doctest::Contains("u="), ValidationError);
  s[17] = 1.5f;
  CHECK_THROWS_AS((void)LightFieldVideo<float>::from_samples(2, 3, 3, 2, 2, 1, s),
                  ValidationError);
  s[17] = 1.0f;
  CHECK_NOTHROW((void)LightFieldVideo<float>::from_samples(2, 3, 3, 2, 2, 1, s));
}

TEST_CASE("packed round trip is bit-identical") {
  const auto dir = temp_dir("packed");
  const auto lf = random_lf(2, 3, 3, 8, 8, 1, 99);
  const auto p1 = dir / "a.lft";
  const auto p2 = dir / "b.lft";
  save_lightfield(lf, p1, LfFormat::packed);
  const auto back = load_lightfield(p1);
  CHECK(back.samples() == lf.samples());
  CHECK(back.frames() == lf.frames());

  save_lightfield(lf, p2, LfFormat::packed);
  CHECK(slurp(p1) == slurp(p2));

  // save -> load -> save reproduces the file
  const auto p3 = dir / "c.lft";
  save_lightfield(back, p3, LfFormat::packed);
  CHECK(slurp(p1) == slurp(p3));
}

TEST_CASE("packed loader rejects malformed files") {
  const auto dir = temp_dir("packed_bad");
  const auto lf = random_lf(1, 3, 3, 4, 4, 1, 5);
  const auto p = dir / "a.lft";
  save_lightfield(lf, p, LfFormat::packed);

  auto bytes = slurp(p);
  {
    std::ofstream out(dir / "trunc.lft", std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() - 7));
  }
  CHECK_THROWS_WITH_AS((void)load_lightfield(dir / "trunc.lft"), doctest::Contains("truncated"),
                       ValidationError);
  {
    auto bad = bytes;
    bad[0] = 'X';
    std::ofstream out(dir / "magic.lft", std::ios::binary);
    out.write(bad.data(), std::streamsize(bad.size()));
  }
  CHECK_THROWS_WITH_AS((void)load_lightfield(dir / "magic.lft"), doctest::Contains("magic"),
                       ValidationError);
  {
    auto extra = bytes + std::string("zz");
    std::ofstream out(dir / "extra.lft", std::ios::binary);
    out.write(extra.data(), std::streamsize(extra.size()));
  }
  CHECK_THROWS_WITH_AS((void)load_lightfield(dir / "extra.lft"), doctest::Contains("trailing"),
                       ValidationError);
}

TEST_CASE("manifest format: 16-bit max is exactly 1.0 and 0.5 quantizes to 128") {
  const auto dir = temp_dir("manifest");

  LightFieldVideo<float> ones(1, 3, 3, 4, 4, 1);
  for (auto& s : ones.samples()) s = 1.0f;
  save_lightfield(ones, dir / "ones16", LfFormat::manifest, 16);
  const RawImage img16 = png_read(dir / "ones16" / expand_view_pattern("t{t:03}_u{u:02}_v{v:02}.png", 0, 1, 2));
  CHECK(img16.bit_depth == 16);
  CHECK(img16.pix[0] == 65535);
  const auto back16 = load_lightfield(dir / "ones16");
  for (float s : back16.samples()) CHECK(s == 1.0f);

  LightFieldVideo<float> half(1, 3, 3, 4, 4, 1);
  for (auto& s : half.samples()) s = 0.5f;
  save_lightfield(half, dir / "half8", LfFormat::manifest, 8);
  const RawImage img8 = png_read(dir / "half8" / expand_view_pattern("t{t:03}_u{u:02}_v{v:02}.png", 0, 0, 0));
  CHECK(img8.bit_depth == 8);
  for (auto p : img8.pix) CHECK(p == 128);
}

TEST_CASE("manifest round trip is exact at the stored bit depth") {
  const auto dir = temp_dir("manifest_rt");
  auto lf = random_lf(2, 3, 3, 6, 5, 3, 11);
  // Snap to the 16-bit lattice so the round trip is lossless.
  for (auto& s : lf.samples()) s = dequantize(quantize(s, 16), 16);
  save_lightfield(lf, dir / "lf", LfFormat::manifest, 16);
  const auto back = load_lightfield(dir / "lf");
  CHECK(back.samples() == lf.samples());
  CHECK(back.channels() == 3);
}

TEST_CASE("manifest with a missing view names the missing file") {
  const auto dir = temp_dir("manifest_missing");
  const auto lf = random_lf(1, 3, 3, 4, 4, 1, 3);
  save_lightfield(lf, dir / "lf", LfFormat::manifest, 8);
  const std::string victim = expand_view_pattern("t{t:03}_u{u:02}_v{v:02}.png", 0, 2, 1);
  fs::remove(dir / "lf" / victim);
  CHECK_THROWS_WITH_AS((void)load_lightfield(dir / "lf"), doctest::Contains(victim.c_str()),
                       ValidationError);
}

TEST_CASE("manifest loader validates fields") {
  const auto dir = temp_dir("manifest_fields");
  const auto lf = random_lf(1, 3, 3, 4, 4, 1, 3);
  save_lightfield(lf, dir / "lf", LfFormat::manifest, 8);
  {
    std::ofstream out(dir / "lf" / "manifest.json");
    out << "{\"format_version\":\"1\",\"T\":1,\"U\":3,\"V\":3,\"H\":4,\"W\":4,"
           "\"bit_depth\":8,\"frame_rate_hz\":25.0,"
           "\"view_pattern\":\"t{t:03}_u{u:02}_v{v:02}.png\"}";
  }
  CHECK_THROWS_WITH_AS((void)load_lightfield(dir / "lf"), doctest::Contains("'C'"),
                       ValidationError);
}

TEST_CASE("view pattern expansion") {
  CHECK(expand_view_pattern("t{t:03}_u{u:02}_v{v:02}.png", 1, 2, 3) == "t001_u02_v03.png");
  CHECK(expand_view_pattern("f{t}.png", 12, 0, 0) == "f12.png");
  CHECK_THROWS_AS((void)expand_view_pattern("x{q:02}.png", 0, 0, 0), ValidationError);
}

TEST_CASE("EPI extraction is pure re-indexing") {
  const auto lf = random_lf(2, 4, 5, 7, 6, 2, 21);
  for (int t = 0; t < 2; ++t)
    for (int c = 0; c < 2; ++c) {
      for (int v = 0; v < 5; ++v)
        for (int y = 0; y < 7; ++y) {
          const auto epi = extract_epi_h(lf, t, v, y, c);
          REQUIRE(epi.values.rows() == 4);
          REQUIRE(epi.values.cols() == 6);
          for (int u = 0; u < 4; ++u)
            for (int x = 0; x < 6; ++x) CHECK(epi.values(u, x) == lf(t, u, v, y, x, c));
        }
      for (int u = 0; u < 4; ++u)
        for (int x = 0; x < 6; ++x) {
          const auto epi = extract_epi_v(lf, t, u, x, c);
          REQUIRE(epi.values.rows() == 5);
          REQUIRE(epi.values.cols() == 7);
          for (int v = 0; v < 5; ++v)
            for (int y = 0; y < 7; ++y) CHECK(epi.values(v, y) == lf(t, u, v, y, x, c));
        }
    }

  LightFieldVideo<float> constant(1, 3, 3, 4, 4, 1);
  for (auto& s : constant.samples()) s = 0.25f;
  const auto epi = extract_epi_h(constant, 0, 1, 2, 0);
  CHECK((epi.values.array() == 0.25f).all());

  CHECK_THROWS_AS((void)extract_epi_h(constant, 0, 3, 0, 0), ValidationError);
  CHECK_THROWS_AS((void)extract_epi_v(constant, 0, 0, 9, 0), ValidationError);
}

TEST_CASE("PFM round trip with pinned header") {
  const auto dir = temp_dir("pfm");
  ArrXf a(3, 2);
  a << 0.5f, -1.25f, 3.f, 4.f, 1e-7f, 65504.f;
  pfm_write(dir / "a.pfm", {a});
  const auto back = pfm_read(dir / "a.pfm");
  REQUIRE(back.size() == 1);
  CHECK((back[0] == a).all());

  const std::string bytes = slurp(dir / "a.pfm");
  CHECK(bytes.substr(0, 9) == "Pf\n2 3\n-1");

  ArrXf r = ArrXf::Random(4, 5), g = ArrXf::Random(4, 5), b = ArrXf::Random(4, 5);
  pfm_write(dir / "rgb.pfm", {r, g, b});
  const auto rgb = pfm_read(dir / "rgb.pfm");
  REQUIRE(rgb.size() == 3);
  CHECK((rgb[0] == r).all());
  CHECK((rgb[2] == b).all());
}

TEST_CASE("PNG 8 and 16 bit round trips") {
  const auto dir = temp_dir("png");
  Rng rng(4);
  for (int depth : {8, 16}) {
    for (int c : {1, 3}) {
      RawImage img;
      img.h = 5;
      img.w = 7;
      img.c = c;
      img.bit_depth = depth;
      img.pix.resize(std::size_t(5) * 7 * c);
      const int maxv = depth == 8 ? 255 : 65535;
      for (auto& p : img.pix) p = std::uint16_t(rng.uniform_int(maxv + 1));
      const auto path = dir / ("img_" + std::to_string(depth) + "_" + std::to_string(c) + ".png");
      png_write(path, img);
      const RawImage back = png_read(path);
      CHECK(back.h == img.h);
      CHECK(back.w == img.w);
      CHECK(back.c == img.c);
      CHECK(back.bit_depth == depth);
      CHECK(back.pix == img.pix);
    }
  }
}

TEST_CASE("checkpoint round trip and validation") {
  const auto dir = temp_dir("ckpt");
  std::vector<TensorEntry> entries;
  entries.push_back({"enc.layer0.wq", MatXf::Random(4, 6)});
  entries.push_back({"enc.layer0.bq", MatXf::Random(1, 6)});
  entries.push_back({"head.cls", MatXf::Random(3, 1)});
  save_checkpoint(dir / "a.ckpt", entries);
  const auto back = load_checkpoint(dir / "a.ckpt");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == entries[i].name);
    CHECK(back[i].value == entries[i].value);
  }

  save_checkpoint(dir / "b.ckpt", entries);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  auto bytes = slurp(dir / "a.ckpt");
  bytes[0] = 'X';
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS_WITH_AS((void)load_checkpoint(dir / "bad.ckpt"), doctest::Contains("magic"),
                       ValidationError);
  {
    std::ofstream out(dir / "trunc.ckpt", std::ios::binary);
    const auto good = slurp(dir / "a.ckpt");
    out.write(good.data(), std::streamsize(good.size() - 5));
  }
  CHECK_THROWS_WITH_AS((void)load_checkpoint(dir / "trunc.ckpt"), doctest::Contains("truncated"),
                       ValidationError);
}

}  // TEST_SUITE
