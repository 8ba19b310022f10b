#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using std::string;

namespace {

const string kCli = BORROWDET_CLI_PATH;
const string kDataDir = BORROWDET_DATA_DIR;

const string& work_dir() {
  static string dir = [] {
    string d = "/tmp/borrowdet_cli_" + std::to_string(::getpid());
    ::mkdir(d.c_str(), 0755);
    return d;
  }();
  return dir;
}

struct RunResult {
  int code = -1;
  string output;  // stdout + stderr
};

string slurp(const string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

RunResult run(const string& args) {
  static int counter = 0;
  string capture = work_dir() + "/cmd_" + std::to_string(counter++) + ".log";
  string cmd = kCli + " " + args + " > " + capture + " 2>&1";
  int raw = std::system(cmd.c_str());
  RunResult result;
  result.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  result.output = slurp(capture);
  return result;
}

bool exists(const string& path) {
  struct stat st{};
  return ::stat(path.c_str(), &st) == 0;
}

string data_args() {
  return "--wordlist " + kDataDir + "/demo_wordlist.tsv --features " + kDataDir +
         "/features.tsv --asjp-map " + kDataDir + "/asjp.tsv --pmi " + kDataDir +
         "/pmi.tsv --colex " + kDataDir + "/colex_demo.tsv --donor donorese";
}

string tiny_model_args() {
  return "--hidden-dim 16 --n-layers 1 --n-heads 2 --ff-dim 24 --batch-size 24 "
         "--epochs 1 --seed 9";
}

// One shared checkpoint for the detect/evaluate/sweep/explain cases.
const string& checkpoint() {
  static string path = [] {
    string out = work_dir() + "/train_base";
    auto result = run("train " + data_args() + " " + tiny_model_args() + " --out " + out);
    REQUIRE_MESSAGE(result.code == 0, result.output);
    return out + "/checkpoint.bin";
  }();
  return path;
}

int count_lines(const string& text) {
  int lines = 0;
  for (char c : text) lines += c == '\n';
  return lines;
}

// Minimal XML well-formedness scan: every element closes in order.
bool xml_well_formed(const string& text) {
  std::vector<string> stack;
  std::size_t pos = 0;
  while ((pos = text.find('<', pos)) != string::npos) {
    auto end = text.find('>', pos);
    if (end == string::npos) return false;
    string tag = text.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;  // declaration / comment
    if (tag.back() == '/') continue;               // self-closing
    if (tag[0] == '/') {
      string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else {
      auto name_end = tag.find_first_of(" \t\n");
      stack.push_back(tag.substr(0, name_end));
    }
  }
  return stack.empty();
}

}  // namespace

TEST_CASE("help and usage errors use the documented exit codes") {
  CHECK(run("--help").code == 0);
  CHECK(run("train --help").code == 0);
  CHECK(run("--bogus-flag").code == 2);
  CHECK(run("transmogrify").code == 2);
  CHECK(run("").code == 2);  // a subcommand is required
}

TEST_CASE("train writes a checkpoint, a log, and a manifest") {
  string out = work_dir() + "/train_case";
  auto result = run("train " + data_args() + " " + tiny_model_args() + " --out " + out);
  CHECK(result.code == 0);
  CHECK(result.output.find("parameters") != string::npos);
  CHECK(exists(out + "/checkpoint.bin"));
  CHECK(exists(out + "/train_log.tsv"));
  CHECK(exists(out + "/train_manifest.txt"));

  auto manifest = slurp(out + "/train_manifest.txt");
  CHECK(manifest.find("config.hidden_dim=16") != string::npos);
  CHECK(manifest.find("checksum.wordlist=") != string::npos);

  SUBCASE("zero epochs still produces a loadable checkpoint") {
    string out0 = work_dir() + "/train_zero";
    auto r = run("train " + data_args() +
                 " --hidden-dim 16 --n-layers 1 --n-heads 2 --ff-dim 24"
                 " --batch-size 24 --epochs 0 --seed 9 --out " + out0);
    CHECK(r.code == 0);
    CHECK(exists(out0 + "/checkpoint.bin"));
  }
}

TEST_CASE("missing resources exit with code 2 and name the path") {
  auto result = run("train --wordlist /nope/words.tsv --features /nope/features.tsv "
                    "--asjp-map /nope/asjp.tsv --out " +
                    work_dir() + "/never");
  CHECK(result.code == 2);
  CHECK(result.output.find("/nope") != string::npos);
  CHECK(result.output.find("error:") != string::npos);
}

TEST_CASE("detect produces predictions and per-language thresholds") {
  string out = work_dir() + "/detect_case";
  auto result = run("detect " + data_args() + " --checkpoint " + checkpoint() +
                    " --out " + out + " --dump-similarities");
  CHECK(result.code == 0);
  REQUIRE(exists(out + "/predictions.tsv"));
  CHECK(exists(out + "/thresholds.tsv"));
  CHECK(exists(out + "/similarities.tsv"));
  CHECK(exists(out + "/detect_manifest.txt"));

  auto predictions = slurp(out + "/predictions.tsv");
  CHECK(count_lines(predictions) == 25);  // header + 24 queries
  CHECK(predictions.find("ID\tLANGUAGE\tCONCEPT\tPREDICTED") == 0);

  auto thresholds = slurp(out + "/thresholds.tsv");
  CHECK(count_lines(thresholds) == 3);  // header + recip_a + recip_b

  SUBCASE("re-running with the same seed is byte-identical") {
    string out2 = work_dir() + "/detect_again";
    auto r = run("detect " + data_args() + " --checkpoint " + checkpoint() +
                 " --out " + out2);
    CHECK(r.code == 0);
    CHECK(slurp(out2 + "/predictions.tsv") == predictions);
  }

  SUBCASE("an unreachable manual threshold flags nothing") {
    string out2 = work_dir() + "/detect_strict";
    auto r = run("detect " + data_args() + " --checkpoint " + checkpoint() +
                 " --threshold 2.0 --out " + out2);
    CHECK(r.code == 0);
    auto rows = slurp(out2 + "/predictions.tsv");
    CHECK(rows.find("\ttrue\t") == string::npos);
  }

  SUBCASE("a zero cosine weight equals the pmi-only method") {
    string out_w = work_dir() + "/detect_w0";
    string out_p = work_dir() + "/detect_pmi";
    auto rw = run("detect " + data_args() + " --checkpoint " + checkpoint() +
                  " --cosine-weight 0 --out " + out_w);
    auto rp = run("detect " + data_args() + " --method pmi --out " + out_p);
    CHECK(rw.code == 0);
    CHECK(rp.code == 0);
    CHECK(slurp(out_w + "/predictions.tsv") == slurp(out_p + "/predictions.tsv"));
  }

  SUBCASE("donor-fixed mode without a donor language is a usage error") {
    auto r = run("detect --wordlist " + kDataDir + "/demo_wordlist.tsv --features " +
                 kDataDir + "/features.tsv --asjp-map " + kDataDir +
                 "/asjp.tsv --pmi " + kDataDir + "/pmi.tsv --checkpoint " +
                 checkpoint() + " --out " + work_dir() + "/never2");
    CHECK(r.code == 2);
    CHECK(r.output.find("--donor") != string::npos);
  }
}

TEST_CASE("evaluate reports aggregate scores") {
  string out = work_dir() + "/eval_case";
  auto result = run("evaluate " + data_args() + " --checkpoint " + checkpoint() +
                    " --out " + out);
  CHECK(result.code == 0);
  REQUIRE(exists(out + "/report.tsv"));
  auto report = slurp(out + "/report.tsv");
  CHECK(report.find("METHOD\tSUPERVISION\tLANGUAGE") == 0);
  CHECK(report.find("ALL") != string::npos);
  CHECK(result.output.find("F1") != string::npos);

  SUBCASE("the all-pairs protocol also runs") {
    string out2 = work_dir() + "/eval_pairs";
    auto r = run("evaluate " + data_args() + " --checkpoint " + checkpoint() +
                 " --protocol all_pairs --out " + out2);
    CHECK(r.code == 0);
    CHECK(exists(out2 + "/report.tsv"));
  }
}

TEST_CASE("sweep writes one row per grid point") {
  string out = work_dir() + "/sweep_case";
  auto result = run("sweep " + data_args() + " --checkpoint " + checkpoint() +
                    " --axis global_threshold --grid-points 5 --out " + out);
  CHECK(result.code == 0);
  REQUIRE(exists(out + "/sweep.tsv"));
  auto table = slurp(out + "/sweep.tsv");
  CHECK(count_lines(table) == 6);  // header + 5 points
  CHECK(table.find("AXIS\tVALUE") == 0);

  SUBCASE("an explicit grid overrides the point count") {
    string out2 = work_dir() + "/sweep_grid";
    auto r = run("sweep " + data_args() + " --checkpoint " + checkpoint() +
                 " --axis cosine_weight --grid 0,0.25,1 --out " + out2);
    CHECK(r.code == 0);
    CHECK(count_lines(slurp(out2 + "/sweep.tsv")) == 4);
  }
}

TEST_CASE("ablate runs the baseline plus each grid cell") {
  string grid = work_dir() + "/mini_grid.tsv";
  std::ofstream(grid) << "LABEL\tOVERRIDES\nWarmer softmax\ttemperature=0.1\n";
  string out = work_dir() + "/ablate_case";
  auto result = run("ablate " + data_args() + " " + tiny_model_args() +
                    " --grid-file " + grid + " --out " + out);
  CHECK(result.code == 0);
  REQUIRE(exists(out + "/ablation.tsv"));
  auto table = slurp(out + "/ablation.tsv");
  CHECK(count_lines(table) == 3);  // header + baseline + 1 cell
  CHECK(table.find("baseline") != string::npos);
  CHECK(table.find("Warmer softmax") != string::npos);
}

TEST_CASE("explain prints a pair diagnostic") {
  string out = work_dir() + "/explain_case";
  auto result = run("explain " + data_args() + " --checkpoint " + checkpoint() +
                    " --out " + out + " recip_a_water donorese_water_1");
  CHECK(result.code == 0);
  CHECK(result.output.find("recip_a_water") != string::npos);
  CHECK(result.output.find("combined") != string::npos);
  CHECK(exists(out + "/explain.txt"));

  auto bad = run("explain " + data_args() + " --checkpoint " + checkpoint() +
                 " --out " + out + " no_such_id donorese_water_1");
  CHECK(bad.code == 2);
}

TEST_CASE("plot renders a score histogram as valid svg") {
  string scores = work_dir() + "/scores.txt";
  {
    std::ofstream out(scores);
    for (int i = 0; i < 100; ++i) out << (0.1 + 0.001 * i) << "\n";
    for (int i = 0; i < 100; ++i) out << (0.8 + 0.001 * i) << "\n";
  }
  string out = work_dir() + "/plot_case";
  auto result = run("plot --scores " + scores + " --title Demo --out " + out);
  CHECK(result.code == 0);
  REQUIRE(exists(out + "/plot.svg"));
  auto svg = slurp(out + "/plot.svg");
  CHECK(xml_well_formed(svg));
  CHECK(svg.find("class=\"threshold\"") != string::npos);
  CHECK(svg.find("class=\"component\"") != string::npos);

  SUBCASE("a manual threshold skips the mixture curves") {
    string out2 = work_dir() + "/plot_manual";
    auto r = run("plot --scores " + scores + " --threshold 0.5 --out " + out2);
    CHECK(r.code == 0);
    auto manual_svg = slurp(out2 + "/plot.svg");
    CHECK(xml_well_formed(manual_svg));
    CHECK(manual_svg.find("class=\"threshold\"") != string::npos);
    CHECK(manual_svg.find("class=\"component\"") == string::npos);
  }

  SUBCASE("an empty score file is an error and writes nothing") {
    string empty = work_dir() + "/empty_scores.txt";
    std::ofstream{empty};
    string out3 = work_dir() + "/plot_empty";
    auto r = run("plot --scores " + empty + " --out " + out3);
    CHECK(r.code == 2);
    CHECK_FALSE(exists(out3 + "/plot.svg"));
  }
}

TEST_CASE("config files fill in flags, and flags win over the file") {
  string cfg = work_dir() + "/run.conf";
  std::ofstream(cfg) << "temperature=0.1\nhidden_dim=16\nn_layers=1\nn_heads=2\n"
                     << "ff_dim=24\nbatch_size=24\nepochs=1\n";

  string out = work_dir() + "/config_file_only";
  auto result = run("train " + data_args() + " --config " + cfg + " --out " + out);
  CHECK(result.code == 0);
  auto manifest = slurp(out + "/train_manifest.txt");
  CHECK(manifest.find("config.temperature=0.1\n") != string::npos);
  CHECK(manifest.find("config.hidden_dim=16\n") != string::npos);

  string out2 = work_dir() + "/config_flag_wins";
  auto r2 = run("train " + data_args() + " --config " + cfg +
                " --temperature 0.2 --out " + out2);
  CHECK(r2.code == 0);
  auto manifest2 = slurp(out2 + "/train_manifest.txt");
  CHECK(manifest2.find("config.temperature=0.2\n") != string::npos);

  auto missing = run("train " + data_args() + " --config /nope/run.conf --out " +
                     work_dir() + "/never3");
  CHECK(missing.code == 2);
}
