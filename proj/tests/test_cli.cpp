#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded and stdout captured.
Run mvnn(const std::string& args) {
  const std::string cmd = std::string(MVNN_BIN) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("command line") {
  const fs::path dir = fs::temp_directory_path() / ("mvnn_cli_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();
  const std::string m = d + "/corpus/manifest.jsonl";

  Run r = mvnn("synth --out " + d + "/corpus --n 100 --seed 7 --knob-recompress --size 48");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out).at("records") == 200);
  CHECK(count_lines(slurp(m)) == 200);

  REQUIRE(mvnn("split --manifest " + m + " --seed 7").code == 0);
  std::size_t with_split = 0;
  {
    std::istringstream in(slurp(m));
    for (std::string line; std::getline(in, line);)
      if (nlohmann::json::parse(line).contains("split")) ++with_split;
  }
  CHECK(with_split == 200);

  const std::string train = "train --manifest " + m +
                            " --ablation no_pixel --seed 7 --epochs 2 --pretrain-epochs 1 --batch-size 32";
  REQUIRE(mvnn(train + " --out " + d + "/a.ckpt --log " + d + "/a.log").code == 0);
  REQUIRE(mvnn(train + " --out " + d + "/b.ckpt").code == 0);
  CHECK(slurp(d + "/a.ckpt") == slurp(d + "/b.ckpt"));
  CHECK(count_lines(slurp(d + "/a.log")) >= 1);

  r = mvnn("eval --checkpoint " + d + "/a.ckpt --manifest " + m + " --split test");
  REQUIRE(r.code == 0);
  const auto metrics = nlohmann::json::parse(r.out);
  for (const char* key : {"accuracy", "precision", "recall", "f1"}) CHECK(metrics.contains(key));
  CHECK(mvnn("eval --checkpoint " + d + "/a.ckpt --manifest " + m + " --split test").out == r.out);

  r = mvnn("predict --checkpoint " + d + "/a.ckpt " + d + "/corpus/images/00000_real.jpg " + d +
           "/corpus/images/00000_fake.jpg");
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out) == 2);
  {
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    const auto j = nlohmann::json::parse(line);
    const double p = j.at("p_fake");
    CHECK((p >= 0 && p <= 1));
    CHECK(j.at("label") == (p >= 0.5 ? 1 : 0));
    CHECK(j.at("alphas").is_null());
  }

  r = mvnn("extract-freq --manifest " + m + " --split val --format binary --out " + d + "/val.mvnf");
  REQUIRE(r.code == 0);
  const std::string feats = slurp(d + "/val.mvnf");
  CHECK(feats.substr(0, 4) == "MVNF");
  CHECK((feats.size() - 10) % (64 * 250 * 4) == 0);

  r = mvnn("ablate --manifest " + m +
           " --seed 1 --variants no_pixel no_freq --epochs 1 --pretrain-epochs 0 --format json");
  REQUIRE(r.code == 0);
  const auto table = nlohmann::json::parse(r.out);
  REQUIRE(table.size() == 2);
  CHECK(table[0].at("variant") == "no_pixel");

  SUBCASE("exit codes") {
    CHECK(mvnn("frobnicate").code == 1);
    CHECK(mvnn("synth --out " + d + "/x --bogus-flag").code == 1);
    CHECK(mvnn("train --manifest " + m + " --ablation none --out " + d + "/c.ckpt").code == 1);
    CHECK(mvnn("split --manifest " + m + " --ratios 0.5,0.5,0.5").code == 1);
    CHECK(mvnn("eval --checkpoint " + d + "/missing.ckpt --manifest " + m).code == 2);
    CHECK(mvnn("train --manifest " + d + "/missing.jsonl --out " + d + "/c.ckpt").code == 2);
    CHECK(mvnn(train + " --lr 1e200 --out " + d + "/c.ckpt").code == 3);
    CHECK(mvnn("synth --help").code == 0);
  }
  fs::remove_all(dir);
}
