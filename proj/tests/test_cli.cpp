#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "rtn/config.hpp"
#include "rtn/eval.hpp"
#include "rtn/train.hpp"

using namespace rtn;
namespace fs = std::filesystem;

namespace {

const std::string kCli = RTN_CLI_PATH;

fs::path fresh_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("rtn_cli_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args, std::string* stdout_text = nullptr) {
  const fs::path out = fs::temp_directory_path() / "rtn_cli_stdout.txt";
  const int rc = std::system((kCli + " " + args + " > " + out.string() + " 2>/dev/null").c_str());
  if (stdout_text) {
    std::ifstream in(out);
    std::ostringstream ss;
    ss << in.rdbuf();
    *stdout_text = ss.str();
  }
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("warp with an untrained model returns the source bit-exactly") {
  const fs::path dir = fresh_dir("warp");
  TrainConfig cfg;
  cfg.seed = 9;
  cfg.data.size = 32;
  Model model = make_model(cfg);  // zero residual head -> zero flow
  save_checkpoint((dir / "zero.rtn").string(), model, 0, serialize_config(cfg));

  SyntheticPair pair = gen_pair(77, cfg.data);
  save_ppm(pair.source, (dir / "source.ppm").string());
  save_ppm(pair.target, (dir / "target.ppm").string());

  const int rc = run_cli("warp --checkpoint " + (dir / "zero.rtn").string() + " --source " +
                         (dir / "source.ppm").string() + " --target " +
                         (dir / "target.ppm").string() + " --out " + (dir / "out").string());
  REQUIRE(rc == 0);
  Image source = load_ppm((dir / "source.ppm").string());
  Image warped = load_ppm((dir / "out/warped.ppm").string());
  REQUIRE(warped.pixels.size() == source.pixels.size());
  for (std::size_t i = 0; i < source.pixels.size(); ++i) {
    CHECK(warped.pixels[i] == source.pixels[i]);
  }
  CHECK(fs::exists(dir / "out/flow.ppm"));
  CHECK(fs::exists(dir / "out/warped_iter0.ppm"));
  CHECK(fs::exists(dir / "out/warped_iter4.ppm"));
}

TEST_CASE("eval report rows aggregate to the printed summary exactly") {
  const fs::path dir = fresh_dir("eval");
  TrainConfig cfg;
  cfg.seed = 11;
  cfg.descriptor_dim = 8;
  cfg.heldout.size = 32;
  Model model = make_model(cfg);
  save_checkpoint((dir / "m.rtn").string(), model, 0, serialize_config(cfg));

  std::string out;
  const int rc = run_cli("eval --checkpoint " + (dir / "m.rtn").string() +
                             " --synthetic 4 --seed 5 --report " + (dir / "report.csv").string(),
                         &out);
  REQUIRE(rc == 0);

  // Printed endpoint_accuracy must equal the mean of the per-pair rows.
  double printed = -1.0;
  {
    std::istringstream is(out);
    std::string key;
    double value;
    while (is >> key >> value) {
      if (key == "endpoint_accuracy") printed = value;
    }
  }
  REQUIRE(printed >= 0.0);
  const auto rows = read_metric_csv((dir / "report.csv").string());
  double sum = 0.0;
  int n = 0;
  for (const auto& row : rows) {
    if (row.metric == "endpoint_accuracy") {
      sum += row.value;
      ++n;
    }
  }
  REQUIRE(n == 4);
  CHECK(printed == sum / n);
}

TEST_CASE("gen then eval from disk works end to end") {
  const fs::path dir = fresh_dir("gen");
  TrainConfig cfg;
  cfg.seed = 13;
  cfg.descriptor_dim = 8;
  cfg.data.size = 32;
  save_config_file(cfg, (dir / "cfg.txt").string());
  REQUIRE(run_cli("gen --config " + (dir / "cfg.txt").string() + " --out " +
                  (dir / "pairs").string() + " --count 3 --seed 21") == 0);
  CHECK(fs::exists(dir / "pairs/pair_0000/source.ppm"));
  CHECK(fs::exists(dir / "pairs/pair_0002/gt.rtnt"));

  Model model = make_model(cfg);
  save_checkpoint((dir / "m.rtn").string(), model, 0, serialize_config(cfg));
  std::string out;
  const int rc = run_cli("eval --checkpoint " + (dir / "m.rtn").string() + " --set " +
                             (dir / "pairs").string(),
                         &out);
  CHECK(rc == 0);
  CHECK(out.find("pairs 3") != std::string::npos);
}

TEST_CASE("exit codes distinguish usage, data, and parse failures") {
  const fs::path dir = fresh_dir("codes");
  CHECK(run_cli("eval") == 1);                                // missing required flag
  CHECK(run_cli("eval --checkpoint /nonexistent.rtn --synthetic 2") == 2);  // data error
  {
    std::ofstream bad(dir / "bad.cfg");
    bad << "[train]\nnot_a_key = 1\n";
  }
  CHECK(run_cli("train --config " + (dir / "bad.cfg").string() + " --out " +
                (dir / "out").string()) == 1);  // unknown key -> usage
  {
    std::ofstream bad(dir / "bad2.cfg");
    bad << "[train]\nsteps = pear\n";
  }
  CHECK(run_cli("train --config " + (dir / "bad2.cfg").string() + " --out " +
                (dir / "out2").string()) == 2);  // malformed value -> parse
}

TEST_CASE("gradcheck subcommand passes and is seed-stable") {
  std::string a, b;
  CHECK(run_cli("gradcheck --seed 123", &a) == 0);
  CHECK(run_cli("gradcheck --seed 123", &b) == 0);
  CHECK(a == b);
  CHECK(a.find("gradcheck PASS") != std::string::npos);
}
