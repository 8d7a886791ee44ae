#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "causiam/adapt.hpp"
#include "causiam/errors.hpp"
#include "causiam/image_io.hpp"
#include "causiam/metrics.hpp"
#include "causiam/network.hpp"
#include "causiam/scm.hpp"
#include "causiam/scm_discrete.hpp"
#include "causiam/synth.hpp"

namespace fs = std::filesystem;
using namespace causiam;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::string pad4(int i) {
    std::ostringstream ss;
    ss << std::setw(4) << std::setfill('0') << i;
    return ss.str();
}

struct DomainSpec {
    std::string name;
    int count = 0;
    PsfKind kind = PsfKind::DISC;
};

std::vector<DomainSpec> parse_domain_specs(const std::string& arg) {
    std::vector<DomainSpec> out;
    std::istringstream in(arg);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos || colon == 0)
            throw ParamError("domain spec must be <name>:<count>, got '" + item + "'");
        DomainSpec d;
        d.name = item.substr(0, colon);
        d.count = std::stoi(item.substr(colon + 1));
        if (d.count < 1) throw ParamError("domain count must be >= 1 in '" + item + "'");
        d.kind = d.name.rfind("gauss", 0) == 0 ? PsfKind::GAUSSIAN : PsfKind::DISC;
        out.push_back(d);
    }
    if (out.empty()) throw ParamError("no domains given");
    return out;
}

DomainStream load_domain_dir(const std::string& dir) {
    fs::path blur_dir = fs::path(dir) / "blur";
    fs::path sharp_dir = fs::path(dir) / "sharp";
    if (!fs::is_directory(blur_dir)) throw IoError("missing blur directory: " + blur_dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(blur_dir))
        if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("no images in " + blur_dir.string());
    DomainStream stream;
    stream.domain_id = fs::path(dir).filename().string();
    for (const std::string& n : names) {
        ImagePair pair;
        pair.blur = load_image((blur_dir / n).string());
        fs::path sharp = sharp_dir / n;
        if (fs::exists(sharp)) pair.sharp = load_image(sharp.string());
        stream.pairs.push_back(std::move(pair));
    }
    return stream;
}

void write_domain_dir(const GeneratedStream& gen, const std::string& out_root) {
    fs::path root = fs::path(out_root) / gen.stream.domain_id;
    fs::create_directories(root / "blur");
    fs::create_directories(root / "sharp");
    for (std::size_t i = 0; i < gen.stream.pairs.size(); ++i) {
        const ImagePair& p = gen.stream.pairs[i];
        std::string name = pad4(static_cast<int>(i)) + ".png";
        save_image(p.blur, (root / "blur" / name).string());
        save_image(*p.sharp, (root / "sharp" / name).string());
    }
    std::ofstream man(root / "manifest.txt");
    if (!man) throw IoError("cannot write manifest in " + root.string());
    for (const StreamEntryInfo& e : gen.manifest) {
        man << e.index << " " << psf_kind_name(e.kind);
        for (double r : e.region_radii) man << " " << r;
        man << "\n";
    }
}

AblateMode parse_ablate(const std::string& s) {
    if (s.empty() || s == "none") return AblateMode::NONE;
    if (s == "no-vspi") return AblateMode::NO_VSPI;
    if (s == "no-hf") return AblateMode::NO_HF;
    if (s == "no-spatial") return AblateMode::NO_SPATIAL;
    if (s == "full-update") return AblateMode::FULL_UPDATE;
    if (s == "no-ema") return AblateMode::NO_EMA;
    throw ParamError("unknown ablation '" + s + "'");
}

void check_config(const AdaptConfig& cfg) {
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ParamError("alpha must lie in [0,1]");
    if (cfg.eta < 0.0 || cfg.eta > 1.0) throw ParamError("eta must lie in [0,1]");
    if (cfg.lambda < 0.0) throw ParamError("lambda must be >= 0");
    if (cfg.lr <= 0.0) throw ParamError("lr must be > 0");
    if (cfg.iterations < 1) throw ParamError("iterations must be >= 1");
    if (cfg.heads < 1 || cfg.head_dim < 1) throw ParamError("heads and head-dim must be >= 1");
}

struct AdaptFileConfig {
    std::string ckpt, domains, report, ablate, image_dir;
    int rounds = -1;
    bool have_rounds = false;
};

/// key=value config file mirroring the adapt flags; unknown keys rejected.
void apply_config_file(const std::string& path, AdaptConfig& cfg, AdaptFileConfig& files) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
        auto strip = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(line_no) + ": expected key=value");
        std::string key = strip(line.substr(0, eq)), val = strip(line.substr(eq + 1));
        try {
            if (key == "alpha") cfg.alpha = std::stod(val);
            else if (key == "eta") cfg.eta = std::stod(val);
            else if (key == "lambda") cfg.lambda = std::stod(val);
            else if (key == "lr") cfg.lr = std::stod(val);
            else if (key == "iterations") cfg.iterations = std::stoi(val);
            else if (key == "heads") cfg.heads = std::stoi(val);
            else if (key == "head_dim") cfg.head_dim = std::stoi(val);
            else if (key == "seed") cfg.ca_seed = std::stoull(val);
            else if (key == "ablate") files.ablate = val;
            else if (key == "ckpt") files.ckpt = val;
            else if (key == "domains") files.domains = val;
            else if (key == "report") files.report = val;
            else if (key == "image_dir") files.image_dir = val;
            else if (key == "rounds") { files.rounds = std::stoi(val); files.have_rounds = true; }
            else throw FormatError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw FormatError("config line " + std::to_string(line_no) + ": bad value for '" + key + "'");
        }
    }
}

int resolve_threads(int flag_value) {
    if (const char* env = std::getenv("CAUSIAM_THREADS")) {
        int n = std::stoi(env);
        if (n >= 1) return n;
    }
    return flag_value;
}

// ---------------- Subcommands ----------------

int cmd_synth(const std::string& domains_arg, int size, std::uint64_t seed, const std::string& out,
              double radius_lo, double radius_hi) {
    std::vector<DomainSpec> specs = parse_domain_specs(domains_arg);
    int total = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        GeneratedStream gen =
            gen_domain_stream(specs[i].name, specs[i].count, seed + 1000 * i, specs[i].kind,
                              radius_lo, radius_hi, size, size);
        write_domain_dir(gen, out);
        total += specs[i].count;
        std::cout << specs[i].name << ": " << specs[i].count << " pairs, "
                  << psf_kind_name(specs[i].kind) << " psf, radii [" << radius_lo << ","
                  << radius_hi << "]\n";
    }
    std::cout << "wrote " << total << " pairs under " << out << "\n";
    return 0;
}

int cmd_pretrain(const std::string& data, int epochs, std::uint64_t seed, const std::string& out,
                 double lr, int channels) {
    DomainStream stream = load_domain_dir(data);
    PretrainResult res = pretrain({&stream}, epochs, seed, channels, lr);
    save_backbone(out, res.params);
    for (const PretrainLogEntry& e : res.log)
        std::cout << "epoch " << e.epoch << " mean_l1 " << format_metric(e.mean_l1) << "\n";
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_adapt(const AdaptFileConfig& files, AdaptConfig cfg, bool save_images) {
    if (files.ckpt.empty() || files.domains.empty())
        throw ParamError("adapt requires --ckpt and --domains");
    cfg.ablate = parse_ablate(files.ablate);
    cfg.save_images = save_images;
    cfg.image_dir = files.image_dir;
    check_config(cfg);
    if (save_images && !files.image_dir.empty()) fs::create_directories(files.image_dir);

    BackboneParams source = load_backbone(files.ckpt);
    std::vector<DomainStream> streams;
    {
        std::istringstream in(files.domains);
        std::string dir;
        while (std::getline(in, dir, ','))
            if (!dir.empty()) streams.push_back(load_domain_dir(dir));
    }
    std::vector<const DomainStream*> ptrs;
    for (const DomainStream& s : streams) ptrs.push_back(&s);

    ModelState state = ModelState::init(source, cfg);
    int rounds = files.have_rounds ? files.rounds : 1;
    RunResult res = run_stream(state, cfg, ptrs, rounds);
    if (!files.report.empty()) write_reports_jsonl(res.reports, files.report);
    std::cout << "processed " << res.reports.size() << " samples over " << rounds
              << " round(s), numeric errors: " << res.numeric_errors << "\n";
    return 0;
}

int cmd_eval(const std::string& report_path, const std::string& csv_out) {
    std::vector<StepReport> reports = read_reports_jsonl(report_path);
    std::vector<MetricSample> samples;
    for (const StepReport& r : reports)
        samples.push_back({r.domain_id, r.round, r.psnr_adapted, r.ssim_adapted});
    AggregateResult agg = aggregate(samples);
    std::cout << render_table(agg);
    std::string csv = render_csv(agg);
    std::cout << csv;
    if (!csv_out.empty()) {
        std::ofstream f(csv_out, std::ios::trunc);
        if (!f) throw IoError("cannot write " + csv_out);
        f << csv;
    }
    return 0;
}

int cmd_scm_identify(const std::string& graph_path, const std::string& x, const std::string& y,
                     bool show_trace) {
    DiscreteScm m = load_scm(graph_path);
    QueryResult q = closed_form(m.graph, x, y);
    if (show_trace)
        for (const std::string& t : q.trace) std::cout << "# " << t << "\n";
    if (!q.identified) {
        std::cout << "FAIL (step 5)\n";
    } else {
        std::cout << q.expr.render() << "  [step " << q.step << "]\n";
    }
    return 0;
}

int cmd_scm_check(const std::string& graph_path, int seeds) {
    DiscreteScm parsed = load_scm(graph_path);
    std::map<std::string, double> worst;
    bool all_pass = true;
    for (int s = 0; s < seeds; ++s) {
        DiscreteScm m = parsed.has_tables() && seeds == 1
                            ? parsed
                            : random_discrete_scm(parsed.graph, 0xC0FFEE + static_cast<std::uint64_t>(s));
        DerivationReport rep = verify_derivation(m);
        for (const DerivationCheck& c : rep.checks) {
            double& w = worst[c.name];
            if (c.max_err > w) w = c.max_err;
            all_pass = all_pass && c.pass;
        }
    }
    for (const auto& [name, err] : worst)
        std::cout << (err <= 1e-10 ? "PASS " : "FAIL ") << name << "  max_err " << err << "\n";
    std::cout << (all_pass ? "all checks passed" : "some checks FAILED") << " over " << seeds
              << " seed(s)\n";
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual test-time adaptation for defocus deblurring, with a causal SCM toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker thread cap (env CAUSIAM_THREADS overrides)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic blur/sharp domain datasets");
    std::string sy_domains, sy_out = "data";
    int sy_size = 64;
    std::uint64_t sy_seed = 7;
    double sy_rlo = 1.0, sy_rhi = 3.0;
    synth->add_option("--domains", sy_domains, "name:count[,name:count...]; gauss* names use gaussian psf")->required();
    synth->add_option("--size", sy_size, "square image size (>= 32)");
    synth->add_option("--seed", sy_seed, "base seed");
    synth->add_option("--out", sy_out, "output root directory")->required();
    synth->add_option("--radius-lo", sy_rlo, "minimum blur radius");
    synth->add_option("--radius-hi", sy_rhi, "maximum blur radius");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "train the source backbone on one domain");
    std::string pt_data, pt_out = "ckpt.cswt";
    int pt_epochs = 5, pt_channels = 16;
    std::uint64_t pt_seed = 1;
    double pt_lr = 1e-3;
    pre->add_option("--data", pt_data, "domain directory with blur/ and sharp/")->required();
    pre->add_option("--epochs", pt_epochs, "training epochs");
    pre->add_option("--seed", pt_seed, "init seed");
    pre->add_option("--out", pt_out, "checkpoint path")->required();
    pre->add_option("--lr", pt_lr, "learning rate");
    pre->add_option("--channels", pt_channels, "bottleneck channels");

    // adapt
    auto* ad = app.add_subcommand("adapt", "run the online adaptation stream");
    AdaptConfig ad_cfg;
    AdaptFileConfig ad_files;
    std::string ad_config_file;
    bool ad_save_images = false;
    int ad_rounds = 1;
    ad->add_option("--config", ad_config_file, "key=value config file (flags override)");
    ad->add_option("--ckpt", ad_files.ckpt, "source checkpoint");
    ad->add_option("--domains", ad_files.domains, "comma-separated ordered domain directories");
    ad->add_option("--rounds", ad_rounds, "repetitions of the full domain sequence");
    ad->add_option("--report", ad_files.report, "JSON-lines per-step report output");
    ad->add_option("--ablate", ad_files.ablate, "one of no-vspi,no-hf,no-spatial,full-update,no-ema");
    ad->add_option("--alpha", ad_cfg.alpha, "semantic fusion weight");
    ad->add_option("--eta", ad_cfg.eta, "EMA rate towards the online model");
    ad->add_option("--lambda", ad_cfg.lambda, "high-frequency loss weight");
    ad->add_option("--lr", ad_cfg.lr, "adaptation learning rate");
    ad->add_option("--iters", ad_cfg.iterations, "updates per test sample (K)");
    ad->add_option("--seed", ad_cfg.ca_seed, "cross-attention init seed");
    ad->add_flag("--save-images", ad_save_images, "write restored images");
    ad->add_option("--image-dir", ad_files.image_dir, "directory for restored images");

    // eval
    auto* ev = app.add_subcommand("eval", "aggregate a report file into tables");
    std::string ev_report, ev_csv;
    ev->add_option("--report", ev_report, "JSON-lines report from adapt")->required();
    ev->add_option("--csv", ev_csv, "also write the CSV here");

    // scm
    auto* scm = app.add_subcommand("scm", "causal graph identification and certification");
    scm->require_subcommand(1);
    auto* ident = scm->add_subcommand("identify", "closed form of P(y|do(x)) or FAIL");
    std::string id_graph, id_x = "X", id_y = "Y";
    bool id_trace = false;
    ident->add_option("--graph", id_graph, "scm DSL file")->required();
    ident->add_option("--x", id_x, "intervention node");
    ident->add_option("--y", id_y, "outcome node");
    ident->add_flag("--trace", id_trace, "print the per-step decision trace");
    auto* chk = scm->add_subcommand("check", "numeric certification of the derivation steps");
    std::string ck_graph;
    int ck_seeds = 50;
    chk->add_option("--graph", ck_graph, "scm DSL file (two-mediator shape)")->required();
    chk->add_option("--seeds", ck_seeds, "random CPT instantiations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        threads = resolve_threads(threads);
        if (threads < 1) throw ParamError("threads must be >= 1");
        if (*synth) return cmd_synth(sy_domains, sy_size, sy_seed, sy_out, sy_rlo, sy_rhi);
        if (*pre) return cmd_pretrain(pt_data, pt_epochs, pt_seed, pt_out, pt_lr, pt_channels);
        if (*ad) {
            AdaptConfig cfg;  // defaults, then file, then flags
            AdaptFileConfig files;
            if (!ad_config_file.empty()) apply_config_file(ad_config_file, cfg, files);
            for (const auto& [flag, apply] : std::vector<std::pair<const char*, std::function<void()>>>{
                     {"--alpha", [&] { cfg.alpha = ad_cfg.alpha; }},
                     {"--eta", [&] { cfg.eta = ad_cfg.eta; }},
                     {"--lambda", [&] { cfg.lambda = ad_cfg.lambda; }},
                     {"--lr", [&] { cfg.lr = ad_cfg.lr; }},
                     {"--iters", [&] { cfg.iterations = ad_cfg.iterations; }},
                     {"--seed", [&] { cfg.ca_seed = ad_cfg.ca_seed; }},
                     {"--ckpt", [&] { files.ckpt = ad_files.ckpt; }},
                     {"--domains", [&] { files.domains = ad_files.domains; }},
                     {"--report", [&] { files.report = ad_files.report; }},
                     {"--ablate", [&] { files.ablate = ad_files.ablate; }},
                     {"--image-dir", [&] { files.image_dir = ad_files.image_dir; }},
                     {"--rounds", [&] { files.rounds = ad_rounds; files.have_rounds = true; }}})
                if (ad->count(flag) > 0) apply();
            return cmd_adapt(files, cfg, ad_save_images);
        }
        if (*ev) return cmd_eval(ev_report, ev_csv);
        if (*ident) return cmd_scm_identify(id_graph, id_x, id_y, id_trace);
        if (*chk) return cmd_scm_check(ck_graph, ck_seeds);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ParamError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
