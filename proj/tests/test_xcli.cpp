#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gramlab/experiment.hpp"

using namespace gramlab;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("gramlab_xcli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// metrics.jsonl comparison that ignores the wall-clock field
std::vector<json> rows_without_wall(const fs::path& p) {
    std::vector<json> out;
    std::ifstream f(p);
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json r = json::parse(line);
        r.erase("wall_ms");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("parse_config merges defaults and validates strictly") {
    json j = {{"experiment", "lazy_vs_rich"}};
    ExperimentConfig c = parse_config(j);
    CHECK(c.dataset.name == "staircase");
    CHECK(c.epochs == 2000);
    CHECK(c.batch_size == 0);
    CHECK(c.network.widths == std::vector<std::size_t>{32, 1024});
    CHECK(c.network.init == "ntk");
    CHECK(c.optimizer.lr == 0.01);

    j["epochs"] = 7;
    j["optimizer"] = {{"lr", 0.5}, {"momentum", 0.9}};
    c = parse_config(j);
    CHECK(c.epochs == 7);
    CHECK(c.optimizer.lr == 0.5);
    CHECK(c.optimizer.momentum == 0.9);

    CHECK_THROWS_AS(parse_config(json::array()), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(json{{"experiment", "frobnicate"}}), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(json{{"experiment", "grokking"}, {"learning_rate", 0.1}}),
                    ConfigInvalid);  // unknown top-level key
    CHECK_THROWS_AS(
        parse_config(json{{"experiment", "grokking"}, {"optimizer", {{"alpha", 0.1}}}}),
        ConfigInvalid);  // unknown nested key
    CHECK_THROWS_AS(parse_config(json{{"experiment", "grokking"}, {"epochs", "many"}}),
                    ConfigInvalid);  // wrong type
}

TEST_CASE("invalid numeric fields fail before any compute") {
    auto bad = [](json patch) {
        json j = {{"experiment", "swissroll_virtual"}};
        j.update(patch);
        return j;
    };
    CHECK_THROWS_AS(parse_config(bad({{"optimizer", {{"lr", -0.1}}}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"optimizer", {{"lr", 0.0}}}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"optimizer", {{"momentum", 1.0}}}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"optimizer", {{"weight_decay", -1.0}}}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"epochs", 0}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"lambda", -1e-3}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"gamma_scale", -2.0}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"loss", "hinge"}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"network", {{"init", "xavier"}}}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"dataset", {{"corrupt_p", 1.5}}}})), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(bad({{"dataset", {{"train_frac", 1.0}}}})), ConfigInvalid);
}

TEST_CASE("config hash ignores the output path and tracks real changes") {
    ExperimentConfig a = default_config("nc_probe");
    ExperimentConfig b = a;
    b.output_dir = "/somewhere/else";
    CHECK(config_hash(a) == config_hash(b));

    b.seed = a.seed + 1;
    CHECK(config_hash(a) != config_hash(b));

    // hash is stable across a serialize -> parse roundtrip
    ExperimentConfig back = parse_config(config_to_json(a));
    CHECK(config_hash(back) == config_hash(a));
}

TEST_CASE("metrics writer stamps rows and rejects backwards steps") {
    fs::path dir = fresh_dir("writer");
    MetricsWriter mw((dir / "metrics.jsonl").string(), "rid-1", "deadbeef");
    mw.write({{"step", 1}, {"epoch", 1}});
    mw.write({{"step", 2}, {"epoch", 2}, {"variant", "other"}});
    mw.write({{"step", 5}, {"epoch", 5}});
    CHECK(mw.rows()[0].at("run_id") == "rid-1");
    CHECK(mw.rows()[0].at("config_hash") == "deadbeef");
    CHECK(mw.rows()[0].at("variant") == "main");  // default variant
    CHECK_THROWS(mw.write({{"step", 3}, {"epoch", 3}}));  // 3 < 5 within "main"
    mw.write({{"step", 3}, {"epoch", 3}, {"variant", "other"}});  // independent counter

    // every line parses on its own
    std::ifstream f(dir / "metrics.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        CHECK(json::parse(line).is_object());
        ++n;
    }
    CHECK(n == 4);
    fs::remove_all(dir);
}

TEST_CASE("summary keeps the final row per variant and flattens extras") {
    std::vector<json> rows;
    rows.push_back({{"variant", "a"}, {"step", 1}, {"loss", 2.0}});
    rows.push_back({{"variant", "a"}, {"step", 2}, {"loss", 1.0}, {"extras", {{"tl", 0.5}}}});
    rows.push_back({{"variant", "b"}, {"step", 1}, {"layers", json::array({{{"tl", 0.25}}})}});
    std::string csv = summary_from_records(rows);
    CHECK(csv.find("a,loss,1\n") != std::string::npos);
    CHECK(csv.find("a,extras.tl,0.5\n") != std::string::npos);
    CHECK(csv.find("b,layers1.tl,0.25\n") != std::string::npos);
    CHECK(csv.find("a,loss,2") == std::string::npos);  // superseded row dropped
    CHECK(summary_from_records(rows) == csv);          // pure function of the rows
}

TEST_CASE("nc_probe run writes replayable artifacts deterministically") {
    fs::path dir1 = fresh_dir("run1");
    ExperimentConfig cfg = default_config("nc_probe");
    cfg.seed = 5;
    cfg.output_dir = dir1.string();
    run_experiment(cfg, "");
    CHECK(fs::exists(dir1 / "config.json"));
    CHECK(fs::exists(dir1 / "metrics.jsonl"));
    CHECK(fs::exists(dir1 / "summary.csv"));
    CHECK(fs::exists(dir1 / "curves.csv"));
    CHECK(fs::is_directory(dir1 / "checkpoints"));

    ReplayReport rep = replay((dir1 / "metrics.jsonl").string());
    CHECK(rep.clean);

    // same config + seed elsewhere: identical metrics modulo wall time
    fs::path dir2 = fresh_dir("run2");
    cfg.output_dir = dir2.string();
    run_experiment(cfg, "");
    CHECK(rows_without_wall(dir1 / "metrics.jsonl") == rows_without_wall(dir2 / "metrics.jsonl"));

    // different seed: distinct run id, still clean
    fs::path dir3 = fresh_dir("run3");
    cfg.seed = 6;
    cfg.output_dir = dir3.string();
    run_experiment(cfg, "");
    auto r1 = rows_without_wall(dir1 / "metrics.jsonl");
    auto r3 = rows_without_wall(dir3 / "metrics.jsonl");
    CHECK(r1[0].at("run_id") != r3[0].at("run_id"));
    CHECK(replay((dir3 / "metrics.jsonl").string()).clean);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    fs::remove_all(dir3);
}

TEST_CASE("replay flags tampered runs") {
    fs::path dir = fresh_dir("tamper");
    ExperimentConfig cfg = default_config("nc_probe");
    cfg.output_dir = dir.string();
    run_experiment(cfg, "");

    // edit one record's hash
    std::string all = slurp(dir / "metrics.jsonl");
    std::string edited = all;
    auto pos = edited.rfind("\"config_hash\":\"");
    REQUIRE(pos != std::string::npos);
    edited[pos + 15] = edited[pos + 15] == '0' ? '1' : '0';
    {
        std::ofstream f(dir / "metrics.jsonl", std::ios::trunc);
        f << edited;
    }
    ReplayReport rep = replay((dir / "metrics.jsonl").string());
    CHECK_FALSE(rep.clean);

    // restore, then break step monotonicity within the final variant
    {
        std::istringstream is(all);
        std::string line, lastline;
        while (std::getline(is, line))
            if (!line.empty()) lastline = line;
        json regressed = json::parse(lastline);
        regressed["step"] = 0;
        std::ofstream f(dir / "metrics.jsonl", std::ios::trunc);
        f << all << regressed.dump() << "\n";
    }
    rep = replay((dir / "metrics.jsonl").string());
    CHECK_FALSE(rep.clean);

    // restore, then corrupt summary.csv
    {
        std::ofstream f(dir / "metrics.jsonl", std::ios::trunc);
        f << all;
    }
    {
        std::ofstream f(dir / "summary.csv", std::ios::app);
        f << "bogus,row,1\n";
    }
    rep = replay((dir / "metrics.jsonl").string());
    CHECK_FALSE(rep.clean);

    CHECK_FALSE(replay((dir / "does_not_exist.jsonl").string()).clean);
    fs::remove_all(dir);
}

TEST_CASE("probe_dump reports TL=1 when features equal the targets") {
    fs::path dir = fresh_dir("probe");
    SplitMix64 rng(8);
    const std::size_t n = 40, c = 3;
    Matrix y(n, c);
    for (std::size_t i = 0; i < y.size(); ++i) y.raw()[i] = rng.next_gaussian();
    Matrix noise(16, n);
    for (std::size_t i = 0; i < noise.size(); ++i) noise.raw()[i] = rng.next_gaussian();
    std::vector<Matrix> layers = {noise, transpose(y)};  // layer 2 carries y exactly
    save_activation_dump((dir / "act.grmh").string(), layers);
    save_target_dump((dir / "tgt.grmy").string(), y);

    std::string csv = probe_dump((dir / "act.grmh").string(), (dir / "tgt.grmy").string(), 0.0);
    std::istringstream is(csv);
    std::string header, l1, l2;
    std::getline(is, header);
    std::getline(is, l1);
    std::getline(is, l2);
    CHECK(header == "layer,tl,surrogate,alignment");
    double tl2 = std::stod(l2.substr(l2.find(',') + 1));
    CHECK(tl2 == Catch::Approx(1.0).margin(1e-6));
    double tl1 = std::stod(l1.substr(l1.find(',') + 1));
    CHECK(tl1 < 1.0);

    // PCA reduction keeps the table shape
    std::string csv_pca =
        probe_dump((dir / "act.grmh").string(), (dir / "tgt.grmy").string(), 0.0, 4);
    CHECK(csv_pca.find("layer,tl") == 0);

    // sample-count mismatch between dump and targets
    Matrix y_short(n - 1, c);
    save_target_dump((dir / "short.grmy").string(), y_short);
    CHECK_THROWS_AS(probe_dump((dir / "act.grmh").string(), (dir / "short.grmy").string(), 0.0),
                    CountMismatch);
    {
        std::ofstream f(dir / "bad.grmh", std::ios::binary);
        f.write("JUNK", 4);
    }
    CHECK_THROWS_AS(probe_dump((dir / "bad.grmh").string(), (dir / "tgt.grmy").string(), 0.0),
                    BadMagic);
    fs::remove_all(dir);
}

TEST_CASE("cli binary maps error classes to exit codes") {
    if (!fs::exists("gramlab")) {
        SUCCEED("gramlab binary not in working directory; exit-code check covered elsewhere");
        return;
    }
    fs::path dir = fresh_dir("cli");
    auto run = [](const std::string& cmd) {
        int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    {
        std::ofstream f(dir / "bad.json");
        f << "{\"experiment\": \"nope\"}";
    }
    CHECK(run("./gramlab run --config " + (dir / "bad.json").string()) == 2);
    CHECK(run("./gramlab run --config " + (dir / "missing.json").string()) == 2);
    CHECK(run("./gramlab probe --activations " + (dir / "absent.grmh").string() +
              " --targets " + (dir / "absent.grmy").string()) == 3);
    {
        std::ofstream f(dir / "good.json");
        f << "{\"experiment\": \"nc_probe\", \"output_dir\": \"" << (dir / "out").string()
          << "\"}";
    }
    CHECK(run("./gramlab run --config " + (dir / "good.json").string()) == 0);
    CHECK(run("./gramlab replay --metrics " + (dir / "out" / "metrics.jsonl").string()) == 0);
    {
        std::ofstream f(dir / "out" / "summary.csv", std::ios::app);
        f << "tampered,row,1\n";
    }
    CHECK(run("./gramlab replay --metrics " + (dir / "out" / "metrics.jsonl").string()) == 5);
    fs::remove_all(dir);
}
