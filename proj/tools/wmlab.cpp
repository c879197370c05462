// wmlab: watermark embedding, detection, rewrite attacks, evaluation, and
// bound verification from one binary. Every run writes a manifest with the
// resolved configuration so it can be reproduced byte for byte.

#include "wmlab/evalharness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace wmlab;
using nlohmann::json;

namespace {

constexpr const char* WMLAB_VERSION = "0.1.0";

struct TextRow {
    std::string id;
    std::string text;
    std::string label;
    std::string prompt;
};

std::vector<TextRow> load_texts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open input file: " + path);
    std::vector<TextRow> rows;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(path + ": bad JSON at line " + std::to_string(line_no) + ": " +
                        e.what());
        }
        TextRow row;
        row.id = j.value("id", "line" + std::to_string(line_no));
        row.text = j.value("text", "");
        row.label = j.value("label", "unknown");
        row.prompt = j.value("prompt", "");
        if (row.text.empty())
            throw Error(path + ": missing text field at line " + std::to_string(line_no));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& resolved) {
    std::filesystem::create_directories(out_dir);
    json manifest;
    manifest["tool"] = "wmlab";
    manifest["version"] = WMLAB_VERSION;
    manifest["command"] = command;
    manifest["resolved"] = resolved;
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw Error("cannot write manifest in " + out_dir);
    out << manifest.dump(2) << '\n';
}

std::shared_ptr<const Vocabulary> resolve_vocab(const std::string& vocab_path,
                                                const LmBackend* backend) {
    if (!vocab_path.empty())
        return std::make_shared<Vocabulary>(Vocabulary::from_file(vocab_path));
    if (backend && backend->vocab())
        return std::shared_ptr<const Vocabulary>(std::shared_ptr<void>(), backend->vocab());
    throw Error("need --vocab or a local --backend to resolve the token vocabulary");
}

// ---------------------------------------------------------------------------
// subcommand state

struct GenerateArgs {
    std::string watermark, backend, corpus, out;
    size_t n = 50, length = 0;
    uint64_t seed = 0;
};

struct DetectArgs {
    std::string input, watermark, backend, vocab, out;
    double threshold = std::numeric_limits<double>::quiet_NaN();
};

struct AttackArgs {
    std::string input, attack = "sira", backend, rewrite, thesaurus, out, prompts;
    double epsilon = 0.3, mask_ratio = 0.7, ratio = 0.3;
    uint64_t seed = 0;
};

struct EvaluateArgs {
    std::string config, out, corpus, attack, annotate_format;
    std::vector<double> fprs;
    double epsilon = std::numeric_limits<double>::quiet_NaN();
    uint64_t seed = 0;
    bool seed_set = false;
    size_t workers = 0, samples = 0;
};

struct CalibrateArgs {
    std::string scores, out, label = "human";
    double fpr = 0.01;
};

struct SweepArgs {
    std::string config, out;
    std::vector<double> epsilons;
    uint64_t seed = 0;
    bool seed_set = false;
};

struct TheoryArgs {
    std::string out;
    MonteCarloSpec spec;
    bool independence = false;
};

struct AnnotateArgs {
    std::string input, watermark, backend, vocab, out, format = "html";
};

// ---------------------------------------------------------------------------
// subcommand bodies

int run_generate(const GenerateArgs& a) {
    WatermarkConfig cfg = WatermarkConfig::from_file(a.watermark);
    std::unique_ptr<LmBackend> backend = make_backend(LmBackendSpec::from_file(a.backend));
    const Vocabulary* vocab = backend->vocab();
    if (!vocab) throw Error("generate needs a local backend");
    const size_t length = a.length ? a.length : cfg.sequence_length;

    std::vector<TextRow> rows;
    if (!a.corpus.empty()) {
        for (const auto& rec : load_corpus(a.corpus, a.n)) {
            TokenSeq prompt = tokenize(rec.prompt, *vocab);
            TokenSeq out = embed(cfg, *backend, prompt, length, hash_str(rec.id, a.seed));
            rows.push_back({rec.id, detokenize(out, *vocab), "watermarked", rec.prompt});
        }
    } else {
        for (size_t i = 0; i < a.n; ++i) {
            const std::string id = "gen-" + std::to_string(i);
            TokenSeq out = embed(cfg, *backend, {}, length, hash_str(id, a.seed));
            rows.push_back({id, detokenize(out, *vocab), "watermarked", ""});
        }
    }

    std::filesystem::create_directories(a.out);
    std::ofstream texts(a.out + "/texts.jsonl");
    if (!texts) throw Error("cannot write " + a.out + "/texts.jsonl");
    for (const auto& r : rows) {
        json j{{"id", r.id}, {"text", r.text}, {"label", r.label}};
        if (!r.prompt.empty()) j["prompt"] = r.prompt;
        texts << j.dump() << '\n';
    }
    write_manifest(a.out, "generate",
                   json{{"watermark", json::parse(cfg.to_json_text())},
                        {"backend", json::parse(backend->spec().to_json_text())},
                        {"corpus", a.corpus},
                        {"n", a.n},
                        {"length", length},
                        {"seed", a.seed}});
    std::cout << "generated " << rows.size() << " texts -> " << a.out << "/texts.jsonl\n";
    return 0;
}

int run_detect(const DetectArgs& a) {
    WatermarkConfig cfg = WatermarkConfig::from_file(a.watermark);
    std::unique_ptr<LmBackend> backend;
    if (!a.backend.empty()) backend = make_backend(LmBackendSpec::from_file(a.backend));
    auto vocab = resolve_vocab(a.vocab, backend.get());
    Detector detector(cfg, vocab->size(),
                      cfg.algorithm == WatermarkAlgorithm::EWD ? backend.get() : nullptr);

    std::optional<double> override;
    if (!std::isnan(a.threshold)) override = a.threshold;

    std::vector<ScoreRow> rows;
    size_t flagged = 0;
    for (const auto& r : load_texts(a.input)) {
        DetectionResult res = detector.detect(tokenize(r.text, *vocab), override);
        rows.push_back({r.id, r.label, res.score});
        if (res.decision) ++flagged;
    }
    std::filesystem::create_directories(a.out);
    save_scores_csv(a.out + "/scores.csv", rows);
    json resolved{{"watermark", json::parse(cfg.to_json_text())},
                  {"input", a.input},
                  {"vocab_fingerprint", vocab->fingerprint()},
                  {"threshold_override", override ? json(*override) : json(nullptr)}};
    if (cfg.algorithm == WatermarkAlgorithm::EWD)
        resolved["ewd_weighting"] = "normalized-shannon-entropy";
    write_manifest(a.out, "detect", resolved);
    std::cout << "scored " << rows.size() << " texts (" << flagged
              << " flagged) -> " << a.out << "/scores.csv\n";
    return 0;
}

int run_attack(const AttackArgs& a) {
    std::unique_ptr<LmBackend> score = make_backend(LmBackendSpec::from_file(a.backend));
    std::unique_ptr<LmBackend> rewrite =
        a.rewrite.empty() ? make_backend(LmBackendSpec::from_file(a.backend))
                          : make_backend(LmBackendSpec::from_file(a.rewrite));
    PromptTemplates templates = a.prompts.empty() ? PromptTemplates::embedded()
                                                  : PromptTemplates::from_dir(a.prompts);
    std::optional<Thesaurus> thesaurus;
    if (!a.thesaurus.empty()) thesaurus = load_thesaurus(a.thesaurus);
    BagOfTokensProvider bag;

    std::filesystem::create_directories(a.out);
    std::ofstream out(a.out + "/attacks.jsonl");
    if (!out) throw Error("cannot write " + a.out + "/attacks.jsonl");

    size_t count = 0;
    for (const auto& r : load_texts(a.input)) {
        const uint64_t sample_seed = hash_str(r.id, a.seed);
        AttackRecord rec;
        if (a.attack == "sira") {
            rec = sira_attack(r.text, *score, *rewrite, a.epsilon, templates);
        } else if (a.attack == "random-mask") {
            rec = random_mask_attack(r.text, a.mask_ratio, *score, *rewrite, sample_seed,
                                     templates);
        } else if (a.attack == "paraphrase" || a.attack == "paraphrase-2") {
            rec.original = r.text;
            rec.reference = paraphrase_attack(r.text, *rewrite, 1, templates);
            rec.attacked = a.attack == "paraphrase-2"
                               ? paraphrase_attack(rec.reference, *rewrite, 1, templates)
                               : rec.reference;
        } else if (a.attack == "word-delete") {
            rec.original = r.text;
            rec.attacked = word_delete(r.text, a.ratio, sample_seed);
            rec.reference = rec.attacked;
        } else if (a.attack == "synonym") {
            if (!thesaurus) throw Error("synonym attack needs --thesaurus");
            rec.original = r.text;
            rec.attacked = synonym_substitute(r.text, a.ratio, *thesaurus, sample_seed);
            rec.reference = rec.attacked;
        } else {
            throw Error("unknown attack: " + a.attack);
        }
        rec.similarity = similarity(rec.original, rec.attacked, bag);

        json j{{"id", r.id},
               {"original", rec.original},
               {"reference", rec.reference},
               {"attacked", rec.attacked},
               {"similarity", rec.similarity}};
        if (!rec.masked.token_texts.empty())
            j["masked"] = {{"rendered", rec.masked.rendered()},
                           {"masked_fraction", rec.masked.masked_fraction},
                           {"tau", rec.masked.profile.tau}};
        out << j.dump() << '\n';
        ++count;
    }
    write_manifest(a.out, "attack",
                   json{{"attack", a.attack},
                        {"epsilon", a.epsilon},
                        {"mask_ratio", a.mask_ratio},
                        {"ratio", a.ratio},
                        {"input", a.input},
                        {"seed", a.seed},
                        {"score_backend", json::parse(score->spec().to_json_text())},
                        {"rewrite_backend", json::parse(rewrite->spec().to_json_text())}});
    std::cout << "attacked " << count << " texts -> " << a.out << "/attacks.jsonl\n";
    return 0;
}

ExperimentSpec resolve_experiment(const EvaluateArgs& a) {
    ExperimentSpec spec = ExperimentSpec::from_file(a.config);
    if (!a.corpus.empty()) spec.corpus_path = a.corpus;
    if (!a.attack.empty()) spec.attack.name = a.attack;
    if (!std::isnan(a.epsilon)) spec.attack.epsilon = a.epsilon;
    if (a.seed_set) spec.seed = a.seed;
    if (a.workers) spec.workers = a.workers;
    if (a.samples) spec.sample_count = a.samples;
    if (!a.fprs.empty()) spec.target_fprs = a.fprs;
    return spec;
}

int run_evaluate(const EvaluateArgs& a) {
    ExperimentSpec spec = resolve_experiment(a);
    ExperimentRecord rec = run_experiment(spec);
    write_experiment_outputs(rec, a.out);
    json resolved = json::parse(spec.to_json_text());
    if (spec.watermark.algorithm == WatermarkAlgorithm::EWD)
        resolved["ewd_weighting"] = "normalized-shannon-entropy";
    write_manifest(a.out, "evaluate", resolved);

    if (!a.annotate_format.empty()) {
        const AnnotateFormat fmt =
            a.annotate_format == "ansi" ? AnnotateFormat::Ansi : AnnotateFormat::Html;
        std::unique_ptr<LmBackend> generation = make_backend(spec.generation_backend);
        std::unique_ptr<LmBackend> scoring = make_backend(spec.scoring_backend);
        Detector detector(spec.watermark, generation->vocab()->size(),
                          spec.watermark.algorithm == WatermarkAlgorithm::EWD
                              ? scoring.get()
                              : nullptr);
        const std::string dir = a.out + "/annotations";
        std::filesystem::create_directories(dir);
        const char* ext = fmt == AnnotateFormat::Ansi ? ".txt" : ".html";
        size_t written = 0;
        for (const auto& s : rec.samples) {
            if (s.failed || written >= 20) continue;
            TokenSeq seq = tokenize(s.record.attacked, *generation->vocab());
            std::ofstream f(dir + "/" + s.id + ext);
            f << annotate(seq, *generation->vocab(), detector, fmt);
            ++written;
        }
    }

    std::cout << "asr=" << rec.asr << " detection_rate=" << rec.detection_rate
              << " best_f1=" << rec.best_f1_value << " mean_similarity="
              << rec.mean_similarity << " samples=" << rec.samples_used << " -> " << a.out
              << "\n";
    return 0;
}

int run_calibrate(const CalibrateArgs& a) {
    std::vector<double> negatives;
    for (const auto& row : load_scores_csv(a.scores))
        if (row.label == a.label) negatives.push_back(row.score);
    if (negatives.empty())
        throw Error("no rows labeled '" + a.label + "' in " + a.scores);
    CalibrationResult cal = calibrate_threshold(negatives, a.fpr);

    std::filesystem::create_directories(a.out);
    json j{{"threshold", cal.threshold},
           {"achieved_fpr", cal.achieved_fpr},
           {"target_fpr", cal.target_fpr},
           {"negatives_used", cal.negatives_used}};
    std::ofstream out(a.out + "/calibration.json");
    out << j.dump(2) << '\n';
    write_manifest(a.out, "calibrate",
                   json{{"scores", a.scores}, {"label", a.label}, {"fpr", a.fpr}});
    std::cout << "threshold=" << cal.threshold << " achieved_fpr=" << cal.achieved_fpr
              << " negatives=" << cal.negatives_used << "\n";
    return 0;
}

int run_sweep(const SweepArgs& a) {
    ExperimentSpec spec = ExperimentSpec::from_file(a.config);
    if (a.seed_set) spec.seed = a.seed;
    auto rows = threshold_sweep(spec, a.epsilons);

    std::filesystem::create_directories(a.out);
    std::ofstream csv(a.out + "/sweep.csv");
    csv << sweep_to_csv(rows);
    json jrows = json::array();
    for (const auto& r : rows)
        jrows.push_back({{"epsilon", r.epsilon},
                         {"asr", r.asr},
                         {"mean_similarity", r.mean_similarity},
                         {"mean_masked_fraction", r.mean_masked_fraction}});
    std::ofstream js(a.out + "/sweep.json");
    js << jrows.dump(2) << '\n';
    write_manifest(a.out, "sweep",
                   json{{"config", json::parse(spec.to_json_text())},
                        {"epsilons", a.epsilons}});
    std::cout << sweep_to_csv(rows);
    return 0;
}

int run_theory_check(TheoryArgs a) {
    a.spec.independence_mode = a.independence;
    BoundsReport report = verify_bounds_montecarlo(a.spec);
    std::filesystem::create_directories(a.out);
    std::ofstream out(a.out + "/theory_report.json");
    out << report.to_json_text() << '\n';
    write_manifest(a.out, "theory-check",
                   json{{"trials", a.spec.trials},
                        {"text_length", a.spec.text_length},
                        {"watermarked_count", a.spec.watermarked_count},
                        {"delta", a.spec.delta},
                        {"epsilon", a.spec.epsilon},
                        {"gamma", a.spec.gamma},
                        {"dirichlet_alpha", a.spec.dirichlet_alpha},
                        {"independence_mode", a.spec.independence_mode},
                        {"seed", a.spec.seed}});
    std::cout << report.to_json_text() << "\n";
    if (!report.passed) {
        std::cerr << "theory-check: bounds violated; see report\n";
        return 2;
    }
    return 0;
}

int run_annotate(const AnnotateArgs& a) {
    WatermarkConfig cfg = WatermarkConfig::from_file(a.watermark);
    std::unique_ptr<LmBackend> backend;
    if (!a.backend.empty()) backend = make_backend(LmBackendSpec::from_file(a.backend));
    auto vocab = resolve_vocab(a.vocab, backend.get());
    Detector detector(cfg, vocab->size(),
                      cfg.algorithm == WatermarkAlgorithm::EWD ? backend.get() : nullptr);
    const AnnotateFormat fmt = a.format == "ansi" ? AnnotateFormat::Ansi : AnnotateFormat::Html;
    const char* ext = fmt == AnnotateFormat::Ansi ? ".txt" : ".html";

    const std::string dir = a.out + "/annotations";
    std::filesystem::create_directories(dir);
    size_t count = 0;
    for (const auto& r : load_texts(a.input)) {
        std::ofstream f(dir + "/" + r.id + ext);
        f << annotate(tokenize(r.text, *vocab), *vocab, detector, fmt);
        ++count;
    }
    write_manifest(a.out, "annotate",
                   json{{"watermark", json::parse(cfg.to_json_text())},
                        {"input", a.input},
                        {"format", a.format}});
    std::cout << "annotated " << count << " texts -> " << dir << "\n";
    return 0;
}

// nearest flag name for typo suggestions
std::string nearest_flag(const CLI::App* app, const std::string& bad) {
    auto distance = [](const std::string& a, const std::string& b) {
        std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
        for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
        for (size_t i = 1; i <= a.size(); ++i) {
            cur[0] = i;
            for (size_t j = 1; j <= b.size(); ++j)
                cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                                   prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
            std::swap(prev, cur);
        }
        return prev[b.size()];
    };
    std::string best;
    size_t best_d = bad.size();
    std::vector<const CLI::App*> apps = {app};
    for (const auto& sub : app->get_subcommands({})) apps.push_back(sub);
    for (const CLI::App* candidate : apps)
        for (const auto* opt : candidate->get_options())
            for (const auto& name : opt->get_lnames()) {
                const size_t d = distance("--" + name, bad);
                if (d < best_d) {
                    best_d = d;
                    best = "--" + name;
                }
            }
    return best_d <= 3 ? best : "";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"watermark robustness laboratory"};
    app.require_subcommand(1);
    app.set_version_flag("--version", WMLAB_VERSION);

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "embed watermarks into generated texts");
    c_gen->add_option("--watermark", gen.watermark, "watermark config JSON")->required();
    c_gen->add_option("--backend", gen.backend, "generation backend spec JSON")->required();
    c_gen->add_option("--corpus", gen.corpus, "prompt corpus JSONL (optional)");
    c_gen->add_option("--n", gen.n, "number of texts");
    c_gen->add_option("--length", gen.length, "tokens per text (default: config)");
    c_gen->add_option("--seed", gen.seed, "global seed");
    c_gen->add_option("--out", gen.out, "output directory")->required();

    DetectArgs det;
    auto* c_det = app.add_subcommand("detect", "score texts with a watermark detector");
    c_det->add_option("--input", det.input, "texts JSONL")->required();
    c_det->add_option("--watermark", det.watermark, "watermark config JSON")->required();
    c_det->add_option("--backend", det.backend, "backend spec (vocabulary / EWD entropy)");
    c_det->add_option("--vocab", det.vocab, "vocabulary file");
    c_det->add_option("--threshold", det.threshold, "decision threshold override");
    c_det->add_option("--out", det.out, "output directory")->required();

    AttackArgs att;
    auto* c_att = app.add_subcommand("attack", "apply a perturbation attack to texts");
    c_att->add_option("--input", att.input, "texts JSONL")->required();
    c_att->add_option("--attack", att.attack,
                      "sira|random-mask|paraphrase|paraphrase-2|word-delete|synonym");
    c_att->add_option("--backend", att.backend, "scoring backend spec")->required();
    c_att->add_option("--rewrite", att.rewrite, "rewrite backend spec (default: --backend)");
    c_att->add_option("--epsilon", att.epsilon, "self-information percentile");
    c_att->add_option("--mask-ratio", att.mask_ratio, "random-mask ratio");
    c_att->add_option("--ratio", att.ratio, "word-delete/synonym ratio");
    c_att->add_option("--thesaurus", att.thesaurus, "synonym thesaurus JSON");
    c_att->add_option("--prompts", att.prompts, "prompt template directory");
    c_att->add_option("--seed", att.seed, "global seed");
    c_att->add_option("--out", att.out, "output directory")->required();

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "run a full experiment");
    c_ev->add_option("--config", ev.config, "experiment spec JSON")->required();
    c_ev->add_option("--corpus", ev.corpus, "override corpus path");
    c_ev->add_option("--attack", ev.attack, "override attack name");
    c_ev->add_option("--epsilon", ev.epsilon, "override attack epsilon");
    c_ev->add_option("--samples", ev.samples, "override sample count");
    c_ev->add_option("--workers", ev.workers, "worker pool size");
    c_ev->add_option("--fpr", ev.fprs, "target FPRs (repeatable)");
    c_ev->add_option("--seed", ev.seed, "override seed")->trigger_on_parse()
        ->each([&ev](const std::string&) { ev.seed_set = true; });
    c_ev->add_option("--annotate", ev.annotate_format, "write annotations: html|ansi");
    c_ev->add_option("--out", ev.out, "output directory")->required();

    CalibrateArgs cal;
    auto* c_cal = app.add_subcommand("calibrate", "threshold at a target FPR from scores");
    c_cal->add_option("--scores", cal.scores, "scores.csv")->required();
    c_cal->add_option("--fpr", cal.fpr, "target false positive rate");
    c_cal->add_option("--label", cal.label, "negative-class label (default: human)");
    c_cal->add_option("--out", cal.out, "output directory")->required();

    SweepArgs sw;
    auto* c_sw = app.add_subcommand("sweep", "rewrite attack across an epsilon grid");
    c_sw->add_option("--config", sw.config, "experiment spec JSON")->required();
    c_sw->add_option("--epsilons", sw.epsilons, "epsilon grid")->required()->delimiter(',');
    c_sw->add_option("--seed", sw.seed, "override seed")->trigger_on_parse()
        ->each([&sw](const std::string&) { sw.seed_set = true; });
    c_sw->add_option("--out", sw.out, "output directory")->required();

    TheoryArgs th;
    auto* c_th = app.add_subcommand("theory-check", "Monte-Carlo bound verification");
    c_th->add_option("--trials", th.spec.trials, "simulation trials");
    c_th->add_option("--seed", th.spec.seed, "simulation seed");
    c_th->add_option("--text-length", th.spec.text_length, "tokens per simulated text");
    c_th->add_option("--watermarked-count", th.spec.watermarked_count, "planted tokens");
    c_th->add_option("--vocab-size", th.spec.vocab_size, "distribution support");
    c_th->add_option("--delta", th.spec.delta, "probability boost");
    c_th->add_option("--epsilon", th.spec.epsilon, "masking percentile");
    c_th->add_option("--gamma", th.spec.gamma, "green selection quantile");
    c_th->add_option("--dirichlet-alpha", th.spec.dirichlet_alpha, "entropy knob");
    c_th->add_flag("--independence", th.independence, "freeze tau for independent events");
    c_th->add_option("--workers", th.spec.threads, "worker pool size");
    c_th->add_option("--out", th.out, "output directory")->required();

    AnnotateArgs an;
    auto* c_an = app.add_subcommand("annotate", "per-token watermark markup");
    c_an->add_option("--input", an.input, "texts JSONL")->required();
    c_an->add_option("--watermark", an.watermark, "watermark config JSON")->required();
    c_an->add_option("--backend", an.backend, "backend spec (vocabulary / EWD entropy)");
    c_an->add_option("--vocab", an.vocab, "vocabulary file");
    c_an->add_option("--format", an.format, "html|ansi");
    c_an->add_option("--out", an.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        if (argc > 1) {
            for (int i = 1; i < argc; ++i) {
                const std::string arg = argv[i];
                if (arg.rfind("--", 0) == 0) {
                    const std::string hint = nearest_flag(&app, arg);
                    if (!hint.empty() && hint != arg)
                        std::cerr << "  (did you mean " << hint << "?)\n";
                }
            }
        }
        return 1;
    }

    try {
        if (c_gen->parsed()) return run_generate(gen);
        if (c_det->parsed()) return run_detect(det);
        if (c_att->parsed()) return run_attack(att);
        if (c_ev->parsed()) return run_evaluate(ev);
        if (c_cal->parsed()) return run_calibrate(cal);
        if (c_sw->parsed()) return run_sweep(sw);
        if (c_th->parsed()) return run_theory_check(th);
        if (c_an->parsed()) return run_annotate(an);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
