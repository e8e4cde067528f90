#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef LFTRACK_BIN
#error "LFTRACK_BIN must point at the pipeline executable"
#endif
#ifndef LFTRACK_ASSETS
#error "LFTRACK_ASSETS must point at the repository asset directory"
#endif

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;  // stdout + stderr interleaved
};

CmdResult run_cmd(const std::string& cmd) {
  CmdResult r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const std::string kBin = LFTRACK_BIN;
const std::string kAssets = LFTRACK_ASSETS;

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "lftrack_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_scene(const fs::path& path, const std::string& extra = "") {
  std::ofstream out(path);
  out << "T=4 U=5 V=5 H=48 W=48 C=1\n";
  out << "background_texture=noise background_lo=0.2 background_hi=0.8 background_cell=6\n";
  out << "layer0.texture=checker layer0.disparity=2 layer0.cx=20 layer0.cy=20\n";
  out << "layer0.w=10 layer0.h=10 layer0.vx=1.5 layer0.vy=0.5\n";
  out << "layer0.lo=0.1 layer0.hi=0.9 layer0.cell=3\n";
  out << extra;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// toy-sized model so the training smoke stays fast
const std::string kToySets =
    " --set patch_size=8 --set c_emb=8 --set depth=1 --set heads=2"
    " --set decoder_depth=1 --set decoder_heads=2 --set template_size=16"
    " --set search_size=32 --set jitter_px=2";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("synth is deterministic and esi matches the golden frame at any thread count") {
    const fs::path dir = fresh_dir("golden");
    auto r1 = run_cmd(kBin + " synth --scene " + kAssets + "/demo_scene.txt --out " +
                      (dir / "lf.lft").string() + " --gt " + (dir / "gt.txt").string() +
                      " --seed 1");
    CHECK(r1.code == 0);
    auto r2 = run_cmd(kBin + " synth --scene " + kAssets + "/demo_scene.txt --out " +
                      (dir / "lf2.lft").string() + " --gt " + (dir / "gt2.txt").string() +
                      " --seed 1");
    CHECK(r2.code == 0);
    CHECK(slurp(dir / "lf.lft") == slurp(dir / "lf2.lft"));

    const std::string golden = slurp(fs::path(kAssets) / "golden" / "demo_esi_0000.pfm");
    for (const char* env : {"LF_ESI_THREADS=1 ", "LF_ESI_THREADS=3 "}) {
      const fs::path out = dir / (std::string("esi_") + env[15]);
      auto r = run_cmd(std::string(env) + kBin + " esi --lf " + (dir / "lf.lft").string() +
                       " --out " + out.string());
      CHECK(r.code == 0);
      CHECK(slurp(out / "frame_0000.pfm") == golden);
    }
  }

  TEST_CASE("esi stats: constant field reports max 0, sum/mean ratio is the interior count") {
    const fs::path dir = fresh_dir("stats");
    {
      std::ofstream scene(dir / "flat.txt");
      scene << "T=1 U=5 V=5 H=24 W=24 C=1\n";
      scene << "background_texture=constant background_lo=0.4 background_hi=0.4\n";
    }
    REQUIRE(run_cmd(kBin + " synth --scene " + (dir / "flat.txt").string() + " --out " +
                    (dir / "flat.lft").string())
                .code == 0);
    auto flat = run_cmd(kBin + " esi --lf " + (dir / "flat.lft").string() + " --out " +
                        (dir / "flat_esi").string());
    CHECK(flat.code == 0);
    CHECK(flat.out.find("max=0 ") != std::string::npos);

    write_scene(dir / "scene.txt");
    REQUIRE(run_cmd(kBin + " synth --scene " + (dir / "scene.txt").string() + " --out " +
                    (dir / "lf.lft").string())
                .code == 0);
    double max_sum = 0, max_mean = 0;
    auto rs = run_cmd(kBin + " esi --lf " + (dir / "lf.lft").string() + " --out " +
                      (dir / "s").string() + " --set variant=sum");
    auto rm = run_cmd(kBin + " esi --lf " + (dir / "lf.lft").string() + " --out " +
                      (dir / "m").string() + " --set variant=mean");
    CHECK(rs.code == 0);
    CHECK(rm.code == 0);
    REQUIRE(std::sscanf(rs.out.c_str(), "frame=0 min=%*g max=%lg", &max_sum) == 1);
    REQUIRE(std::sscanf(rm.out.c_str(), "frame=0 min=%*g max=%lg", &max_mean) == 1);
    REQUIRE(max_mean > 0);
    CHECK(max_sum / max_mean == doctest::Approx(3.0).epsilon(1e-4));
  }

  TEST_CASE("train, track, and eval chain into each other") {
    const fs::path dir = fresh_dir("pipeline");
    fs::create_directories(dir / "v0");
    write_scene(dir / "scene.txt");
    REQUIRE(run_cmd(kBin + " synth --scene " + (dir / "scene.txt").string() + " --out " +
                    (dir / "v0" / "lf.lft").string() + " --gt " + (dir / "v0" / "gt.txt").string())
                .code == 0);

    auto tr = run_cmd(kBin + " train --data " + (dir / "v0").string() + " --out " +
                      (dir / "model.ckpt").string() + " --trace " + (dir / "trace.csv").string() +
                      kToySets + " --set steps=3");
    CHECK(tr.code == 0);
    CHECK(fs::exists(dir / "model.ckpt"));
    CHECK(fs::exists(dir / "model.ckpt.cfg"));
    const std::string trace = slurp(dir / "trace.csv");
    CHECK(trace.rfind("step,total,l_m,l_cls,l_reg", 0) == 0);

    // the sidecar config rebuilds the toy model without repeating --set
    auto tk = run_cmd(kBin + " track --model " + (dir / "model.ckpt").string() + " --lf " +
                      (dir / "v0" / "lf.lft").string() + " --out " + (dir / "results.txt").string() +
                      " --gt " + (dir / "v0" / "gt.txt").string());
    CHECK(tk.code == 0);

    auto ev = run_cmd(kBin + " eval --pred " + (dir / "results.txt").string() + " --gt " +
                      (dir / "v0" / "gt.txt").string() + " --out " + (dir / "metrics.txt").string());
    CHECK(ev.code == 0);
    CHECK(ev.out.find("success=") != std::string::npos);
    CHECK(slurp(dir / "metrics.txt").find("norm_precision=") != std::string::npos);

    // perfect predictions score a full success rate
    {
      std::ifstream gt(dir / "v0" / "gt.txt");
      std::ofstream pred(dir / "perfect.txt");
      std::string line;
      while (std::getline(gt, line)) {
        if (line.empty() || line[0] == '#') continue;
        int t, k;
        float cx, cy, w, h;
        REQUIRE(std::sscanf(line.c_str(), "%d %d %f %f %f %f", &t, &k, &cx, &cy, &w, &h) == 6);
        pred << t << " " << cx << " " << cy << " " << w << " " << h << " 1\n";
      }
    }
    auto pv = run_cmd(kBin + " eval --pred " + (dir / "perfect.txt").string() + " --gt " +
                      (dir / "v0" / "gt.txt").string());
    CHECK(pv.code == 0);
    CHECK(pv.out.find("success=1\n") != std::string::npos);
    CHECK(pv.out.find("precision=1\n") != std::string::npos);
  }

  TEST_CASE("input mistakes exit with code 2 and a pointed message") {
    const fs::path dir = fresh_dir("errors");
    write_scene(dir / "scene.txt");
    REQUIRE(run_cmd(kBin + " synth --scene " + (dir / "scene.txt").string() + " --out " +
                    (dir / "lf.lft").string())
                .code == 0);

    auto missing_ckpt = run_cmd(kBin + " track --model " + (dir / "nope.ckpt").string() +
                                " --lf " + (dir / "lf.lft").string() + " --out " +
                                (dir / "r.txt").string() + " --gt " + (dir / "gt.txt").string());
    CHECK(missing_ckpt.code == 2);

    auto unknown_key = run_cmd(kBin + " esi --lf " + (dir / "lf.lft").string() + " --out " +
                               (dir / "x").string() + " --set mystery=1");
    CHECK(unknown_key.code == 2);
    CHECK(unknown_key.out.find("unknown key 'mystery'") != std::string::npos);

    auto bad_value = run_cmd(kBin + " esi --lf " + (dir / "lf.lft").string() + " --out " +
                             (dir / "x").string() + " --set variant=median");
    CHECK(bad_value.code == 2);

    write_scene(dir / "wild.txt", "layer1.texture=constant layer1.disparity=9 layer1.cx=24"
                                  " layer1.cy=24 layer1.w=6 layer1.h=6\n");
    auto bad_scene = run_cmd(kBin + " synth --scene " + (dir / "wild.txt").string() + " --out " +
                             (dir / "bad.lft").string());
    CHECK(bad_scene.code == 2);
    CHECK(bad_scene.out.find("shift bound") != std::string::npos);

    auto no_sub = run_cmd(kBin);
    CHECK(no_sub.code == 2);
  }

  TEST_CASE("gradcheck passes on the standard components and help lists config keys") {
    auto gc = run_cmd(kBin + " gradcheck");
    CHECK(gc.code == 0);
    CHECK(gc.out.find("status=PASS") != std::string::npos);
    CHECK(gc.out.find("status=FAIL") == std::string::npos);

    auto help = run_cmd(kBin + " esi --help");
    CHECK(help.code == 0);
    CHECK(help.out.find("channel_policy") != std::string::npos);
    auto thelp = run_cmd(kBin + " train --help");
    CHECK(thelp.code == 0);
    for (const char* key : {"rho", "lambda1", "weight_decay", "template_size"})
      CHECK(thelp.out.find(key) != std::string::npos);

    auto bench = run_cmd("LF_ESI_THREADS=2 " + kBin + " bench --frames 1 --size 32 --reps 1");
    CHECK(bench.code == 0);
    CHECK(bench.out.find("threads=2") != std::string::npos);
    CHECK(bench.out.find("per_frame_ms=") != std::string::npos);
  }
}
