#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "gm/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("gm_cli_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const {
        return (path / name).string();
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// Small, fast end-to-end config.
const char* kSmallConfig = R"({
  "sim": {"n_devices": 14, "n_tasks": 700, "seed": 5,
          "affinity_fraction": 0.4},
  "window": {"n_slots": 5},
  "node2vec": {"dim": 16, "walks_per_node": 3, "walk_length": 12,
               "epochs": 1, "seed": 5},
  "model": {"d_a": 16, "gnn_widths": [8, 8], "d_m": 16, "d_state": 4,
            "head_hidden": 16, "n_mamba": 2},
  "train": {"epochs_max": 2, "folds": 2, "seed": 5, "min_pairs": 10}
})";

struct CoutCapture {
    std::stringstream buffer;
    std::streambuf* old;
    CoutCapture() : old(std::cout.rdbuf(buffer.rdbuf())) {}
    ~CoutCapture() { std::cout.rdbuf(old); }
};

}  // namespace

TEST_CASE("simulate writes the requested dataset", "[cli]") {
    TempDir tmp;
    const std::string out = tmp.file("data.jsonl");
    CoutCapture cap;
    REQUIRE(gm::cli::run_cli({"simulate", "--out", out}) == 0);
    const std::string text = slurp(out);
    // Default Table-I sizing: header line + 8000 record lines.
    CHECK(line_count(text) == 8001);
    CHECK(text.substr(0, 13) == "{\"version\":1,");
}

TEST_CASE("simulate with zero tasks emits a header-only file", "[cli]") {
    TempDir tmp;
    const std::string out = tmp.file("empty.jsonl");
    CoutCapture cap;
    REQUIRE(gm::cli::run_cli({"simulate", "--tasks", "0", "--devices", "10",
                              "--out", out}) == 0);
    CHECK(line_count(slurp(out)) == 1);
}

TEST_CASE("simulate twice gives identical bytes", "[cli]") {
    TempDir tmp;
    CoutCapture cap;
    const std::string a = tmp.file("a.jsonl"), b = tmp.file("b.jsonl");
    REQUIRE(gm::cli::run_cli({"--seed", "11", "simulate", "--devices", "30",
                              "--tasks", "200", "--out", a}) == 0);
    REQUIRE(gm::cli::run_cli({"--seed", "11", "simulate", "--devices", "30",
                              "--tasks", "200", "--out", b}) == 0);
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("snapshot subcommand writes edge lines", "[cli]") {
    TempDir tmp;
    CoutCapture cap;
    const std::string data = tmp.file("data.jsonl");
    REQUIRE(gm::cli::run_cli({"simulate", "--devices", "10", "--tasks", "50",
                              "--out", data}) == 0);
    const std::string snaps = tmp.file("snaps.jsonl");
    REQUIRE(gm::cli::run_cli({"snapshot", "--data", data, "--slots", "4",
                              "--out", snaps}) == 0);
    const std::string text = slurp(snaps);
    CHECK(line_count(text) >= 1);
    const auto first = nlohmann::json::parse(
        text.substr(0, text.find('\n')));
    for (const char* key : {"slot", "src", "dst", "w", "n"})
        CHECK(first.contains(key));
}

TEST_CASE("full pipeline: train, evaluate, select", "[cli]") {
    TempDir tmp;
    const std::string cfg = tmp.file("cfg.json");
    std::ofstream(cfg) << kSmallConfig;
    const std::string data = tmp.file("data.jsonl");
    const std::string model = tmp.file("model.gmckpt");
    const std::string metrics = tmp.file("metrics.csv");

    CoutCapture cap;
    REQUIRE(gm::cli::run_cli({"--config", cfg, "simulate", "--out", data}) ==
            0);
    REQUIRE(gm::cli::run_cli({"--config", cfg, "train", "--data", data,
                              "--out-model", model, "--metrics", metrics}) ==
            0);
    const std::string ckpt = slurp(model);
    CHECK(ckpt.substr(0, 10) == "GMCKPT v1\n");
    const std::string csv = slurp(metrics);
    CHECK(csv.substr(0, 31) == "fold,epoch,split,rmse,mae,loss\n");
    // Every row has exactly six columns.
    std::istringstream lines(csv);
    std::string line;
    bool saw_test_row = false;
    while (std::getline(lines, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 5);
        if (line.rfind("final,-,test,", 0) == 0) saw_test_row = true;
    }
    CHECK(saw_test_row);

    // Determinism: the second train run reproduces both artifacts.
    const std::string model2 = tmp.file("model2.gmckpt");
    const std::string metrics2 = tmp.file("metrics2.csv");
    REQUIRE(gm::cli::run_cli({"--config", cfg, "train", "--data", data,
                              "--out-model", model2, "--metrics",
                              metrics2}) == 0);
    CHECK(slurp(model2) == ckpt);
    CHECK(slurp(metrics2) == csv);

    // Evaluate loads the checkpoint and emits the six-column slot CSV.
    const std::string eval_csv = tmp.file("eval.csv");
    REQUIRE(gm::cli::run_cli({"--config", cfg, "evaluate", "--data", data,
                              "--model", model, "--metrics", eval_csv}) == 0);
    const std::string eval_text = slurp(eval_csv);
    CHECK(eval_text.substr(0, 33) == "slot,n_pairs,split,rmse,mae,loss\n");
    std::istringstream eval_lines(eval_text);
    while (std::getline(eval_lines, line))
        CHECK(std::count(line.begin(), line.end(), ',') == 5);
    CHECK(eval_text.find("overall,") != std::string::npos);

    // Select with the face preset prints a ranking JSON.
    {
        CoutCapture sel_cap;
        REQUIRE(gm::cli::run_cli({"--config", cfg, "select", "--data", data,
                                  "--model", model, "--owner", "0",
                                  "--preset", "face"}) == 0);
        const auto j = nlohmann::json::parse(sel_cap.buffer.str());
        CHECK(j["owner"] == 0);
        CHECK(j["task"]["density"] == 2339.0);
        CHECK(j["task"]["max_time_s"] == 80.0);
        CHECK(j["ranking"].size() == 13);
    }
    // Virus preset loads the other parameter column.
    {
        CoutCapture sel_cap;
        REQUIRE(gm::cli::run_cli({"--config", cfg, "select", "--data", data,
                                  "--model", model, "--owner", "0",
                                  "--preset", "virus"}) == 0);
        const auto j = nlohmann::json::parse(sel_cap.buffer.str());
        CHECK(j["task"]["density"] == 32946.0);
        CHECK(j["task"]["max_time_s"] == 700.0);
    }
    // An infeasible deadline is a result, not an error.
    {
        CoutCapture sel_cap;
        REQUIRE(gm::cli::run_cli({"--config", cfg, "select", "--data", data,
                                  "--model", model, "--owner", "0", "--task",
                                  "5,2339,0.001"}) == 0);
        const auto j = nlohmann::json::parse(sel_cap.buffer.str());
        CHECK(j["selected"].is_null());
    }

    // Truncated checkpoint: load error names the missing parameter.
    const std::string broken = tmp.file("broken.gmckpt");
    std::ofstream(broken) << ckpt.substr(0, ckpt.find("head.w0"));
    CHECK(gm::cli::run_cli({"--config", cfg, "evaluate", "--data", data,
                            "--model", broken, "--metrics",
                            tmp.file("x.csv")}) == 1);

    // Unknown owner id fails.
    CHECK(gm::cli::run_cli({"--config", cfg, "select", "--data", data,
                            "--model", model, "--owner", "99", "--preset",
                            "face"}) == 1);
}

TEST_CASE("train with zero epochs still emits artifacts", "[cli]") {
    TempDir tmp;
    const std::string cfg = tmp.file("cfg.json");
    std::ofstream(cfg) << kSmallConfig;
    const std::string data = tmp.file("data.jsonl");
    CoutCapture cap;
    REQUIRE(gm::cli::run_cli({"--config", cfg, "simulate", "--out", data}) ==
            0);
    const std::string model = tmp.file("model.gmckpt");
    const std::string metrics = tmp.file("metrics.csv");
    REQUIRE(gm::cli::run_cli({"--config", cfg, "train", "--data", data,
                              "--epochs", "0", "--out-model", model,
                              "--metrics", metrics}) == 0);
    CHECK(slurp(model).substr(0, 10) == "GMCKPT v1\n");
    CHECK(slurp(metrics).find("final,-,test,") != std::string::npos);
}

TEST_CASE("corrupt dataset lines fail with the line number", "[cli]") {
    TempDir tmp;
    CoutCapture cap;
    const std::string data = tmp.file("data.jsonl");
    REQUIRE(gm::cli::run_cli({"simulate", "--devices", "10", "--tasks", "20",
                              "--out", data}) == 0);
    std::string text = slurp(data);
    const std::size_t second_line = text.find('\n') + 1;
    text.insert(second_line, "not json");
    std::ofstream(data) << text;
    CHECK(gm::cli::run_cli({"snapshot", "--data", data,
                            "--out", tmp.file("s.jsonl")}) == 1);
}

TEST_CASE("config validation rejects unknown keys", "[cli]") {
    TempDir tmp;
    const std::string cfg = tmp.file("bad.json");
    std::ofstream(cfg) << R"({"sim": {"n_devices": 10, "typo_key": 1}})";
    CoutCapture cap;
    CHECK(gm::cli::run_cli({"--config", cfg, "simulate", "--out",
                            tmp.file("d.jsonl")}) == 1);

    const std::string cfg2 = tmp.file("bad2.json");
    std::ofstream(cfg2) << R"({"alpha": {"a1": 0.7, "a2": 0.4}})";
    CHECK(gm::cli::run_cli({"--config", cfg2, "simulate", "--out",
                            tmp.file("e.jsonl")}) == 1);
}

TEST_CASE("unwritable output path fails", "[cli]") {
    CoutCapture cap;
    CHECK(gm::cli::run_cli({"simulate", "--devices", "5", "--tasks", "5",
                            "--out", "/nonexistent_dir/x.jsonl"}) == 1);
}
