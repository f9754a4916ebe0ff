#ifdef LAYOUTSYNTH_CLI_PATH

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "layoutsynth/checkpoint.hpp"
#include "layoutsynth/config.hpp"
#include "support/suites.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run_cli(const std::string& args) {
  const std::string cmd = std::string(LAYOUTSYNTH_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path root;
  fs::path config;
  Workspace() {
    root = fs::temp_directory_path() / "layoutsynth_test_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    layoutsynth::RunConfig c;
    c.seed = 3;
    c.model = suites::tiny_network();
    c.data.resolution = 16;
    c.data.num_samples = 8;
    c.optim.batch_size = 4;
    c.train.steps = 2;
    c.data_dir = (root / "data").string();
    config = root / "config.json";
    std::ofstream(config) << layoutsynth::to_json(c);
  }
  ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("end to end with exit codes") {
    Workspace ws;
    const std::string cfg = "--config " + ws.config.string();
    CHECK(run_cli("dataset make " + cfg + " --out " + (ws.root / "data").string()).code == 0);
    CHECK(fs::exists(ws.root / "data" / "index.json"));

    const Result t1 = run_cli("train " + cfg + " --out " + (ws.root / "run1").string());
    REQUIRE(t1.code == 0);
    const Result t2 = run_cli("train " + cfg + " --out " + (ws.root / "run2").string());
    REQUIRE(t2.code == 0);
    CHECK(t1.out == t2.out);
    std::istringstream lines(t1.out);
    std::string line;
    int records = 0;
    while (std::getline(lines, line)) {
      CHECK(nlohmann::json::parse(line).contains("d_loss"));
      ++records;
    }
    CHECK(records == 2);
    // Metadata echoes the output directory; the tensors must match exactly.
    CHECK(layoutsynth::load_checkpoint_file((ws.root / "run1" / "final.isla").string()).tensors ==
          layoutsynth::load_checkpoint_file((ws.root / "run2" / "final.isla").string()).tensors);

    const std::string ckpt = "--checkpoint " + (ws.root / "run1" / "final.isla").string();
    const fs::path layout = ws.root / "layout.json";
    std::ofstream(layout) << R"({"lattice":[16,16],"categories":"shapes",)"
                          << R"("boxes":[{"label":"circle","box":[0.1,0.1,0.6,0.6]}],"style":{"seed":2}})";
    for (const char* dir : {"gen1", "gen2"})
      CHECK(run_cli("generate " + ckpt + " --layout " + layout.string() + " --out " + (ws.root / dir).string())
                .code == 0);
    CHECK(slurp(ws.root / "gen1" / "image.png") == slurp(ws.root / "gen2" / "image.png"));
    CHECK(fs::exists(ws.root / "gen1" / "seeds.json"));

    const Result ev = run_cli("eval " + cfg + " " + ckpt + " --out " + (ws.root / "eval").string());
    CHECK(ev.code == 0);

    CHECK(run_cli("train --config /nonexistent.json").code == 2);
    CHECK(run_cli("train --bogus-flag").code == 2);
    CHECK(run_cli("generate --checkpoint " + ws.config.string() + " --layout " + layout.string() +
                  " --out " + (ws.root / "gen3").string())
              .code == 4);
    std::ofstream(ws.root / "bad.json") << "{";
    CHECK(run_cli("generate " + ckpt + " --layout " + (ws.root / "bad.json").string() + " --out " +
                  (ws.root / "gen4").string())
              .code == 3);
    CHECK(run_cli("train " + cfg + " --out " + (ws.root / "run3").string() + " --steps 1").code == 0);
  }
}

#endif  // LAYOUTSYNTH_CLI_PATH
