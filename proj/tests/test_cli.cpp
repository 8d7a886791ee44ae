#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "causiam/adapt.hpp"
#include "causiam/image_io.hpp"

namespace fs = std::filesystem;
using namespace causiam;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
};

/// Runs the CLI binary with the given arguments, capturing stdout+stderr.
CmdResult run_cli(const std::string& args) {
    std::string cmd = std::string(CAUSIAM_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult res;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) res.out.append(buf, n);
    int status = pclose(pipe);
    res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string fresh_dir(const std::string& tag) {
    fs::path p = fs::path("/tmp") / ("causiam_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

std::string scm_fixture(const std::string& name) {
    return std::string(CAUSIAM_DATA_DIR) + "/scm/" + name;
}

}  // namespace

TEST_CASE("cli: help and usage errors") {
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("nonsense").code == 2);
    CHECK(run_cli("synth --out /tmp/x").code == 2);  // missing --domains
}

TEST_CASE("cli: synth writes the documented layout and is reproducible") {
    std::string out1 = fresh_dir("synth1");
    std::string out2 = fresh_dir("synth2");
    std::string args = "--domains discA:3,gaussB:2 --size 32 --seed 5 --out ";
    CHECK(run_cli("synth " + args + out1).code == 0);
    CHECK(run_cli("synth " + args + out2).code == 0);

    for (const char* d : {"discA", "gaussB"}) {
        fs::path root = fs::path(out1) / d;
        CHECK(fs::is_directory(root / "blur"));
        CHECK(fs::is_directory(root / "sharp"));
        CHECK(fs::is_regular_file(root / "manifest.txt"));
    }
    CHECK(fs::is_regular_file(fs::path(out1) / "discA" / "blur" / "0002.png"));
    CHECK_FALSE(fs::exists(fs::path(out1) / "gaussB" / "blur" / "0002.png"));

    // Same seed, byte-identical output.
    CHECK(read_file((fs::path(out1) / "discA" / "blur" / "0000.png").string()) ==
          read_file((fs::path(out2) / "discA" / "blur" / "0000.png").string()));
    CHECK(read_file((fs::path(out1) / "gaussB" / "manifest.txt").string()) ==
          read_file((fs::path(out2) / "gaussB" / "manifest.txt").string()));

    // Manifest names the psf kind.
    std::string man = read_file((fs::path(out1) / "gaussB" / "manifest.txt").string());
    CHECK(man.find("gaussian") != std::string::npos);

    CHECK(run_cli("synth --domains a:2 --size 16 --out " + fresh_dir("synth_bad")).code == 2);
    CHECK(run_cli("synth --domains a0 --out " + fresh_dir("synth_bad2")).code == 2);
}

TEST_CASE("cli: pretrain, adapt, eval pipeline on a tiny dataset") {
    std::string data = fresh_dir("pipe_data");
    std::string work = fresh_dir("pipe_work");
    REQUIRE(run_cli("synth --domains discA:3,gaussB:2 --size 32 --seed 9 --out " + data).code == 0);

    std::string ckpt = work + "/src.cswt";
    CmdResult pt = run_cli("pretrain --data " + data + "/discA --epochs 1 --seed 1 --out " + ckpt);
    CHECK(pt.code == 0);
    CHECK(pt.out.find("epoch 1 mean_l1") != std::string::npos);
    // Checkpoint magic.
    std::string head = read_file(ckpt).substr(0, 5);
    CHECK(head == "CSWT1");

    std::string report = work + "/rep.jsonl";
    CmdResult ad = run_cli("adapt --ckpt " + ckpt + " --domains " + data + "/discA," + data +
                           "/gaussB --rounds 3 --report " + report);
    CHECK(ad.code == 0);
    std::vector<StepReport> reps = read_reports_jsonl(report);
    CHECK(reps.size() == 15);  // 3 rounds x (3 + 2)
    CHECK(reps[0].domain_id == "discA");
    CHECK(reps[4].domain_id == "gaussB");
    CHECK(reps[14].round == 3);

    std::string csv = work + "/agg.csv";
    CmdResult ev = run_cli("eval --report " + report + " --csv " + csv);
    CHECK(ev.code == 0);
    std::string csv_text = read_file(csv);
    CHECK(csv_text.rfind("domain_id,round,n_images,mean_psnr,mean_ssim", 0) == 0);
    CHECK(count_lines(csv_text) == 7);  // header + 2 domains x 3 rounds

    // Every ablation mode is accepted.
    for (const char* mode : {"no-vspi", "no-hf", "no-spatial", "full-update", "no-ema"}) {
        CmdResult r = run_cli("adapt --ckpt " + ckpt + " --domains " + data +
                              "/gaussB --ablate " + std::string(mode));
        CHECK(r.code == 0);
    }
    CHECK(run_cli("adapt --ckpt " + ckpt + " --domains " + data + "/gaussB --ablate bogus").code ==
          2);
}

TEST_CASE("cli: adapt config file with flag overrides") {
    std::string data = fresh_dir("cfg_data");
    std::string work = fresh_dir("cfg_work");
    REQUIRE(run_cli("synth --domains d:2 --size 32 --seed 3 --out " + data).code == 0);
    std::string ckpt = work + "/src.cswt";
    REQUIRE(run_cli("pretrain --data " + data + "/d --epochs 0 --out " + ckpt).code == 0);

    std::string cfg = work + "/adapt.cfg";
    {
        std::ofstream f(cfg);
        f << "# comment\n"
          << "alpha = 0.1\n"
          << "rounds = 2\n"
          << "domains = " << data << "/d\n"
          << "ckpt = " << ckpt << "\n"
          << "report = " << work << "/cfg_rep.jsonl\n";
    }
    CmdResult r = run_cli("adapt --config " + cfg);
    CHECK(r.code == 0);
    CHECK(read_reports_jsonl(work + "/cfg_rep.jsonl").size() == 4);

    // Flag overrides the file: 1 round wins over rounds=2.
    CmdResult r2 = run_cli("adapt --config " + cfg + " --rounds 1 --report " + work + "/one.jsonl");
    CHECK(r2.code == 0);
    CHECK(read_reports_jsonl(work + "/one.jsonl").size() == 2);

    {
        std::ofstream f(cfg, std::ios::app);
        f << "frobnicate = 1\n";
    }
    CmdResult bad = run_cli("adapt --config " + cfg);
    CHECK(bad.code == 2);
    CHECK(bad.out.find("unknown key") != std::string::npos);

    CHECK(run_cli("adapt --ckpt " + ckpt + " --domains " + data + "/d --alpha 2.0").code == 2);
    CHECK(run_cli("adapt --domains " + data + "/d").code == 2);
    CHECK(run_cli("adapt --ckpt /tmp/does_not_exist.cswt --domains " + data + "/d").code == 3);
    CHECK(run_cli("adapt --ckpt " + ckpt + " --domains /tmp/no_such_domain_dir").code == 3);
}

TEST_CASE("cli: eval rejects empty and malformed reports") {
    std::string work = fresh_dir("eval_bad");
    std::string empty = work + "/empty.jsonl";
    std::ofstream(empty).close();
    CHECK(run_cli("eval --report " + empty).code == 2);

    std::string bad = work + "/bad.jsonl";
    {
        std::ofstream f(bad);
        f << "{oops\n";
    }
    CmdResult r = run_cli("eval --report " + bad);
    CHECK(r.code == 2);
    CHECK(r.out.find("line 1") != std::string::npos);

    CHECK(run_cli("eval --report /tmp/missing_report_file.jsonl").code == 3);
}

TEST_CASE("cli: scm identify on the bundled fixtures") {
    CmdResult a = run_cli("scm identify --graph " + scm_fixture("mediators_latent_s.scm"));
    CHECK(a.code == 0);
    CHECK(a.out.find("FAIL (step 5)") != std::string::npos);

    CmdResult b = run_cli("scm identify --graph " + scm_fixture("mediators.scm"));
    CHECK(b.code == 0);
    CHECK(b.out.find("[step 4]") != std::string::npos);
    CHECK(b.out.find("sum_") != std::string::npos);
    CHECK(b.out.find("k_d") == std::string::npos);  // no latents in the formula

    CmdResult c = run_cli("scm identify --graph " + scm_fixture("chain.scm") + " --x X --y Y");
    CHECK(c.code == 0);
    CHECK(c.out.find("P(y|x)  [step 2]") != std::string::npos);

    CmdResult t = run_cli("scm identify --trace --graph " + scm_fixture("mediators.scm"));
    CHECK(t.code == 0);
    CHECK(t.out.find("# step 1") != std::string::npos);

    CHECK(run_cli("scm identify --graph /tmp/no_such.scm").code == 3);
    CHECK(run_cli("scm identify --graph " + scm_fixture("mediators.scm") + " --x NOPE").code == 2);
}

TEST_CASE("cli: scm check certifies the derivation numerically") {
    CmdResult ok = run_cli("scm check --seeds 3 --graph " + scm_fixture("mediators.scm"));
    CHECK(ok.code == 0);
    CHECK(ok.out.find("all checks passed") != std::string::npos);
    CHECK(ok.out.find("FAIL") == std::string::npos);

    std::string work = fresh_dir("scm_bad");
    std::string bad = work + "/bad.scm";
    {
        std::ifstream src(scm_fixture("mediators.scm"));
        std::ofstream dst(bad);
        dst << src.rdbuf();
        dst << "edge S -> D\n";
    }
    CmdResult fail = run_cli("scm check --seeds 2 --graph " + bad);
    CHECK(fail.code == 1);
    CHECK(fail.out.find("some checks FAILED") != std::string::npos);

    std::string mangled = work + "/mangled.scm";
    {
        std::ofstream f(mangled);
        f << "node X\nedge X\n";
    }
    CmdResult fmt = run_cli("scm check --graph " + mangled);
    CHECK(fmt.code == 2);
    CHECK(fmt.out.find("line 2") != std::string::npos);
}
