#include "wmlab/evalharness.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace wmlab {

using nlohmann::json;

namespace {

json load_json_or_path(const json& node, const char* what) {
    if (node.is_string()) {
        std::ifstream in(node.get<std::string>());
        if (!in)
            throw Error(std::string(what) + ": cannot open " + node.get<std::string>());
        std::stringstream ss;
        ss << in.rdbuf();
        return json::parse(strip_trailing_commas(ss.str()));
    }
    return node;
}

double ordered_mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / (double)v.size();
}

}  // namespace

ExperimentSpec ExperimentSpec::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(strip_trailing_commas(text));
    } catch (const json::exception& e) {
        throw Error(std::string("experiment spec: invalid JSON: ") + e.what());
    }
    ExperimentSpec s;
    if (!j.contains("corpus")) throw Error("experiment spec: missing corpus");
    s.corpus_path = j["corpus"].get<std::string>();
    if (j.contains("samples")) s.sample_count = j["samples"].get<size_t>();
    s.watermark =
        WatermarkConfig::from_json_text(load_json_or_path(j.at("watermark"), "watermark").dump());

    if (j.contains("attack")) {
        const json& a = j["attack"];
        s.attack.name = a.value("name", "none");
        s.attack.epsilon = a.value("epsilon", 0.3);
        s.attack.mask_ratio = a.value("mask_ratio", 0.7);
        s.attack.ratio = a.value("ratio", 0.3);
        s.attack.thesaurus_path = a.value("thesaurus", "");
    }

    const json& b = j.at("backends");
    s.generation_backend =
        LmBackendSpec::from_json_text(load_json_or_path(b.at("generation"), "generation").dump());
    s.scoring_backend =
        LmBackendSpec::from_json_text(load_json_or_path(b.at("scoring"), "scoring").dump());
    if (b.contains("rewrite"))
        s.rewrite_backend =
            LmBackendSpec::from_json_text(load_json_or_path(b["rewrite"], "rewrite").dump());
    else
        s.rewrite_backend = s.scoring_backend;
    if (b.contains("judge"))
        s.judge_backend =
            LmBackendSpec::from_json_text(load_json_or_path(b["judge"], "judge").dump());
    if (b.contains("embedding")) {
        if (b["embedding"].is_string() && b["embedding"] == "bag-of-tokens") {
            s.embedding_provider = "bag-of-tokens";
        } else {
            // {endpoint, model, auth_env?, timeout_ms?} for /v1/embeddings
            const json e = load_json_or_path(b["embedding"], "embedding");
            LmBackendSpec es;
            es.kind = "remote-completion";  // carrier; only the endpoint fields matter
            es.endpoint = e.value("endpoint", "");
            es.model = e.value("model", "");
            es.auth_env = e.value("auth_env", "");
            es.timeout_ms = e.value("timeout_ms", 30000);
            if (es.endpoint.empty() || es.model.empty())
                throw Error("experiment spec: embedding needs endpoint and model");
            s.embedding_provider = "remote";
            s.embedding_backend = es;
        }
    }

    s.generation_length = j.value("generation_length", (size_t)230);
    s.seed = j.value("seed", (uint64_t)0);
    if (j.contains("target_fprs")) {
        s.target_fprs.clear();
        for (const auto& f : j["target_fprs"]) s.target_fprs.push_back(f.get<double>());
    }
    s.calibrated_asr = j.value("calibrated_asr", false);
    s.workers = j.value("workers", (size_t)0);
    s.prompt_dir = j.value("prompts", "");
    s.failure_tolerance = j.value("failure_tolerance", 0.10);
    if (s.sample_count && *s.sample_count < 1)
        throw Error("experiment spec: samples must be >= 1");
    return s;
}

ExperimentSpec ExperimentSpec::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open experiment spec: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return from_json_text(ss.str());
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

std::string ExperimentSpec::to_json_text() const {
    json j;
    j["corpus"] = corpus_path;
    if (sample_count) j["samples"] = *sample_count;
    j["watermark"] = json::parse(watermark.to_json_text());
    j["attack"] = {{"name", attack.name},
                   {"epsilon", attack.epsilon},
                   {"mask_ratio", attack.mask_ratio},
                   {"ratio", attack.ratio}};
    if (!attack.thesaurus_path.empty()) j["attack"]["thesaurus"] = attack.thesaurus_path;
    j["backends"] = {{"generation", json::parse(generation_backend.to_json_text())},
                     {"scoring", json::parse(scoring_backend.to_json_text())},
                     {"rewrite", json::parse(rewrite_backend.to_json_text())}};
    if (embedding_backend)
        j["backends"]["embedding"] = {{"endpoint", embedding_backend->endpoint},
                                      {"model", embedding_backend->model},
                                      {"auth_env", embedding_backend->auth_env},
                                      {"timeout_ms", embedding_backend->timeout_ms}};
    else
        j["backends"]["embedding"] = embedding_provider;
    if (judge_backend) j["backends"]["judge"] = json::parse(judge_backend->to_json_text());
    j["generation_length"] = generation_length;
    j["seed"] = seed;
    j["target_fprs"] = target_fprs;
    j["calibrated_asr"] = calibrated_asr;
    j["workers"] = workers;
    if (!prompt_dir.empty()) j["prompts"] = prompt_dir;
    j["failure_tolerance"] = failure_tolerance;
    return j.dump(2);
}

namespace {

PerplexityResult ppl_of_text(const LmBackend& backend, const std::string& text) {
    std::vector<ScoredToken> scored = backend.score_text(text);
    if (scored.empty()) throw Error("perplexity: empty text");
    PerplexityResult r;
    double sum = 0.0;
    for (const auto& t : scored) {
        sum += t.value;
        r.capped = r.capped || t.capped;
    }
    r.value = std::exp(sum / (double)scored.size());
    return r;
}

DetectionResult detect_text(const Detector& detector, const Vocabulary& vocab,
                            const std::string& text, double threshold) {
    return detector.detect(tokenize(text, vocab), threshold);
}

struct HarnessContext {
    const ExperimentSpec& spec;
    const LmBackend& generation;
    const LmBackend& scoring;
    const LmBackend& rewrite;
    const LmBackend* judge;  // optional
    const EmbeddingProvider& embedding;
    const Vocabulary& vocab;  // generation-side vocabulary; detector space
    const Detector& detector;
    const PromptTemplates& templates;
    const Thesaurus* thesaurus;
    double decision_threshold;
};

SampleResult run_one_sample(const HarnessContext& ctx, const CorpusRecord& rec) {
    const ExperimentSpec& spec = ctx.spec;
    const uint64_t sample_seed = hash_str(rec.id, spec.seed);

    SampleResult out;
    out.id = rec.id;
    AttackRecord& record = out.record;

    TokenSeq prompt = tokenize(rec.prompt, ctx.vocab);
    TokenSeq watermarked =
        embed(spec.watermark, ctx.generation, prompt, spec.generation_length, sample_seed);
    record.original = detokenize(watermarked, ctx.vocab);

    const std::string& name = spec.attack.name;
    if (name == "none") {
        record.reference = record.original;
        record.attacked = record.original;
    } else if (name == "sira") {
        record = sira_attack(record.original, ctx.scoring, ctx.rewrite, spec.attack.epsilon,
                             ctx.templates);
    } else if (name == "random-mask") {
        record = random_mask_attack(record.original, spec.attack.mask_ratio, ctx.scoring,
                                    ctx.rewrite, sample_seed, ctx.templates);
    } else if (name == "paraphrase" || name == "paraphrase-2") {
        record.reference = paraphrase_attack(record.original, ctx.rewrite, 1, ctx.templates);
        record.attacked = name == "paraphrase-2"
                              ? paraphrase_attack(record.reference, ctx.rewrite, 1,
                                                  ctx.templates)
                              : record.reference;
    } else if (name == "word-delete") {
        record.attacked = word_delete(record.original, spec.attack.ratio, sample_seed);
        record.reference = record.attacked;
    } else if (name == "synonym") {
        if (!ctx.thesaurus) throw Error("synonym attack needs a thesaurus file");
        record.attacked =
            synonym_substitute(record.original, spec.attack.ratio, *ctx.thesaurus, sample_seed);
        record.reference = record.attacked;
    } else {
        throw Error("unknown attack: " + name);
    }

    record.stage_scores.original =
        detect_text(ctx.detector, ctx.vocab, record.original, ctx.decision_threshold);
    record.stage_scores.reference =
        detect_text(ctx.detector, ctx.vocab, record.reference, ctx.decision_threshold);
    record.stage_scores.attacked =
        detect_text(ctx.detector, ctx.vocab, record.attacked, ctx.decision_threshold);

    out.ppl_original = ppl_of_text(ctx.scoring, record.original);
    out.ppl_reference = ppl_of_text(ctx.scoring, record.reference);
    out.ppl_attacked = ppl_of_text(ctx.scoring, record.attacked);

    record.similarity = similarity(record.original, record.attacked, ctx.embedding);
    if (ctx.judge) out.judge_rating = llm_judge(record.original, record.attacked, *ctx.judge);
    return out;
}

}  // namespace

ExperimentRecord run_experiment(const ExperimentSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<CorpusRecord> corpus = load_corpus(spec.corpus_path, spec.sample_count);
    if (corpus.empty()) throw Error("experiment: corpus is empty");

    std::unique_ptr<LmBackend> generation = make_backend(spec.generation_backend);
    std::unique_ptr<LmBackend> scoring = make_backend(spec.scoring_backend);
    std::unique_ptr<LmBackend> rewrite = make_backend(spec.rewrite_backend);
    std::unique_ptr<LmBackend> judge;
    if (spec.judge_backend) judge = make_backend(*spec.judge_backend);
    std::unique_ptr<EmbeddingProvider> embedding;
    if (spec.embedding_backend)
        embedding = std::make_unique<RemoteEmbeddingProvider>(*spec.embedding_backend);
    else if (spec.embedding_provider == "bag-of-tokens")
        embedding = std::make_unique<BagOfTokensProvider>();
    else
        throw Error("experiment: unknown embedding provider " + spec.embedding_provider);

    const Vocabulary* vocab = generation->vocab();
    if (!vocab) throw Error("experiment: generation backend must be local");

    const LmBackend* ewd_scorer = nullptr;
    if (spec.watermark.algorithm == WatermarkAlgorithm::EWD) {
        if (!scoring->vocab() || scoring->vocab()->fingerprint() != vocab->fingerprint())
            throw Error("experiment: EWD needs a scoring backend sharing the generation "
                        "vocabulary");
        ewd_scorer = scoring.get();
    }
    Detector detector(spec.watermark, vocab->size(), ewd_scorer);

    PromptTemplates templates = spec.prompt_dir.empty()
                                    ? PromptTemplates::embedded()
                                    : PromptTemplates::from_dir(spec.prompt_dir);
    std::optional<Thesaurus> thesaurus;
    if (!spec.attack.thesaurus_path.empty())
        thesaurus = load_thesaurus(spec.attack.thesaurus_path);

    // Calibration negatives are exclusively the corpus's human reference
    // texts; attacked text never enters this pool.
    std::vector<double> negative_scores;
    std::vector<std::string> negative_ids;
    for (const auto& rec : corpus) {
        if (!rec.reference || rec.reference->empty()) continue;
        try {
            TokenSeq seq = tokenize(*rec.reference, *vocab);
            negative_scores.push_back(detector.detect(seq).score);
            negative_ids.push_back(rec.id);
        } catch (const Error&) {
            // too-short references are skipped, not failed
        }
    }

    double decision_threshold = spec.watermark.default_threshold();
    std::string threshold_mode = "default";
    if (spec.calibrated_asr) {
        if (negative_scores.empty())
            throw Error("experiment: calibrated_asr needs reference texts as negatives");
        if (spec.target_fprs.empty())
            throw Error("experiment: calibrated_asr needs target_fprs");
        decision_threshold =
            calibrate_threshold(negative_scores, spec.target_fprs.front()).threshold;
        std::ostringstream mode;
        mode << "calibrated@" << spec.target_fprs.front();
        threshold_mode = mode.str();
    }

    HarnessContext ctx{spec,
                       *generation,
                       *scoring,
                       *rewrite,
                       judge.get(),
                       *embedding,
                       *vocab,
                       detector,
                       templates,
                       thesaurus ? &*thesaurus : nullptr,
                       decision_threshold};

    std::vector<SampleResult> samples(corpus.size());
    {
        size_t n_threads = spec.workers ? spec.workers : std::thread::hardware_concurrency();
        n_threads = std::max<size_t>(1, std::min({n_threads, corpus.size(), (size_t)16}));
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (size_t i = 0; i < n_threads; ++i)
            pool.emplace_back([&]() {
                for (size_t k = next.fetch_add(1); k < corpus.size(); k = next.fetch_add(1)) {
                    try {
                        samples[k] = run_one_sample(ctx, corpus[k]);
                    } catch (const Error& e) {
                        samples[k].id = corpus[k].id;
                        samples[k].failed = true;
                        samples[k].error = e.what();
                    }
                }
            });
        for (auto& th : pool) th.join();
    }

    ExperimentRecord rec;
    rec.samples = std::move(samples);
    rec.negative_scores = std::move(negative_scores);
    rec.threshold_used = decision_threshold;
    rec.threshold_mode = threshold_mode;
    rec.scoring_backend_id = scoring->id();
    rec.generation_backend_id = generation->id();
    rec.rewrite_backend_id = rewrite->id();

    std::vector<double> z_orig, z_ref, z_att, ppl_orig, ppl_ref, ppl_att, sims, masked_fracs;
    std::vector<double> attacked_scores, ratings;
    size_t detected = 0;
    for (const auto& s : rec.samples) {
        if (s.failed) {
            ++rec.samples_failed;
            continue;
        }
        ++rec.samples_used;
        const StageScores& st = s.record.stage_scores;
        z_orig.push_back(st.original->score);
        z_ref.push_back(st.reference->score);
        z_att.push_back(st.attacked->score);
        attacked_scores.push_back(st.attacked->score);
        if (st.attacked->decision) ++detected;
        ppl_orig.push_back(s.ppl_original->value);
        ppl_ref.push_back(s.ppl_reference->value);
        ppl_att.push_back(s.ppl_attacked->value);
        sims.push_back(s.record.similarity);
        if (s.judge_rating) ratings.push_back((double)*s.judge_rating);
        if (!s.record.masked.token_texts.empty())
            masked_fracs.push_back(s.record.masked.masked_fraction);
    }
    if (rec.samples_used == 0) throw Error("experiment: all samples failed");
    if ((double)rec.samples_failed >
        spec.failure_tolerance * (double)rec.samples.size()) {
        std::string first_error;
        for (const auto& s : rec.samples)
            if (s.failed) {
                first_error = s.error;
                break;
            }
        throw Error("experiment: " + std::to_string(rec.samples_failed) + "/" +
                    std::to_string(rec.samples.size()) + " samples failed (tolerance " +
                    std::to_string(spec.failure_tolerance) +
                    "); first error: " + first_error);
    }

    rec.detection_rate = (double)detected / (double)rec.samples_used;
    rec.asr = 1.0 - rec.detection_rate;
    rec.mean_z_original = ordered_mean(z_orig);
    rec.mean_z_reference = ordered_mean(z_ref);
    rec.mean_z_attacked = ordered_mean(z_att);
    rec.mean_z_negatives = ordered_mean(rec.negative_scores);
    rec.mean_ppl_original = ordered_mean(ppl_orig);
    rec.mean_ppl_reference = ordered_mean(ppl_ref);
    rec.mean_ppl_attacked = ordered_mean(ppl_att);
    rec.mean_similarity = ordered_mean(sims);
    if (!ratings.empty()) rec.mean_judge_rating = ordered_mean(ratings);

    if (!rec.negative_scores.empty()) {
        for (double fpr : spec.target_fprs) {
            FprOperatingPoint op;
            op.target_fpr = fpr;
            const CalibrationResult cal = calibrate_threshold(rec.negative_scores, fpr);
            op.threshold = cal.threshold;
            op.achieved_fpr = cal.achieved_fpr;
            const TprResult t = tpr_at_fpr(attacked_scores, rec.negative_scores, fpr);
            op.tpr = t.tpr;
            op.f1 = t.f1;
            rec.operating_points.push_back(op);
        }
        rec.best_f1_value = best_f1(attacked_scores, rec.negative_scores).f1;
    }

    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

namespace {

json detection_to_json(const std::optional<DetectionResult>& d) {
    if (!d) return nullptr;
    return json{{"score", d->score},
                {"decision", d->decision},
                {"green_count", d->green_count},
                {"scored_tokens", d->scored_tokens},
                {"threshold", d->threshold_used}};
}

json ppl_to_json(const std::optional<PerplexityResult>& p) {
    if (!p) return nullptr;
    return json{{"value", p->value}, {"capped", p->capped}};
}

}  // namespace

std::string ExperimentRecord::sample_jsonl_row(const SampleResult& s) const {
    json j;
    j["id"] = s.id;
    j["failed"] = s.failed;
    if (s.failed) {
        j["error"] = s.error;
        return j.dump();
    }
    j["original"] = s.record.original;
    j["reference"] = s.record.reference;
    j["attacked"] = s.record.attacked;
    if (!s.record.masked.token_texts.empty()) {
        j["masked"] = {{"rendered", s.record.masked.rendered()},
                       {"masked_fraction", s.record.masked.masked_fraction},
                       {"tau", s.record.masked.profile.tau},
                       {"epsilon", s.record.masked.profile.epsilon},
                       {"degenerate", s.record.masked.degenerate}};
    }
    j["similarity"] = s.record.similarity;
    if (s.judge_rating) j["judge_rating"] = *s.judge_rating;
    j["scores"] = {{"original", detection_to_json(s.record.stage_scores.original)},
                   {"reference", detection_to_json(s.record.stage_scores.reference)},
                   {"attacked", detection_to_json(s.record.stage_scores.attacked)}};
    j["ppl"] = {{"original", ppl_to_json(s.ppl_original)},
                {"reference", ppl_to_json(s.ppl_reference)},
                {"attacked", ppl_to_json(s.ppl_attacked)}};
    return j.dump();
}

std::string ExperimentRecord::aggregate_json() const {
    json j;
    j["samples_used"] = samples_used;
    j["samples_failed"] = samples_failed;
    j["asr"] = asr;
    j["detection_rate"] = detection_rate;
    j["threshold_used"] = threshold_used;
    j["threshold_mode"] = threshold_mode;
    j["best_f1"] = best_f1_value;
    json ops = json::array();
    for (const auto& op : operating_points)
        ops.push_back({{"target_fpr", op.target_fpr},
                       {"threshold", op.threshold},
                       {"achieved_fpr", op.achieved_fpr},
                       {"tpr", op.tpr},
                       {"f1", op.f1}});
    j["operating_points"] = ops;
    j["mean_z"] = {{"original", mean_z_original},
                   {"reference", mean_z_reference},
                   {"attacked", mean_z_attacked},
                   {"negatives", mean_z_negatives}};
    j["mean_ppl"] = {{"original", mean_ppl_original},
                     {"reference", mean_ppl_reference},
                     {"attacked", mean_ppl_attacked}};
    j["mean_similarity"] = mean_similarity;
    if (mean_judge_rating) j["mean_judge_rating"] = *mean_judge_rating;
    j["negatives_used"] = negative_scores.size();
    j["backends"] = {{"generation", generation_backend_id},
                     {"scoring", scoring_backend_id},
                     {"rewrite", rewrite_backend_id}};
    return j.dump(2);
}

void write_experiment_outputs(const ExperimentRecord& record, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);

    std::ofstream samples(out_dir + "/samples.jsonl");
    if (!samples) throw Error("cannot write " + out_dir + "/samples.jsonl");
    for (const auto& s : record.samples) samples << record.sample_jsonl_row(s) << '\n';

    std::ofstream agg(out_dir + "/aggregate.json");
    if (!agg) throw Error("cannot write " + out_dir + "/aggregate.json");
    agg << record.aggregate_json() << '\n';

    std::vector<ScoreRow> rows;
    for (const auto& s : record.samples) {
        if (s.failed) continue;
        rows.push_back({s.id, "watermarked", s.record.stage_scores.original->score});
        rows.push_back({s.id, "attacked", s.record.stage_scores.attacked->score});
    }
    for (size_t i = 0; i < record.negative_scores.size(); ++i)
        rows.push_back({"negative-" + std::to_string(i), "human", record.negative_scores[i]});
    save_scores_csv(out_dir + "/scores.csv", rows);

    // wall-clock lives apart so aggregate.json stays bit-reproducible
    std::ofstream timings(out_dir + "/timings.json");
    timings << json{{"wall_seconds", record.wall_seconds}}.dump(2) << '\n';
}

std::vector<SweepRow> threshold_sweep(const ExperimentSpec& spec,
                                      std::span<const double> epsilons) {
    if (epsilons.size() < 2) throw Error("threshold_sweep: need at least 2 epsilon values");
    std::vector<SweepRow> rows;
    for (double eps : epsilons) {
        ExperimentSpec run = spec;
        run.attack.name = "sira";
        run.attack.epsilon = eps;
        const ExperimentRecord rec = run_experiment(run);
        SweepRow row;
        row.epsilon = eps;
        row.asr = rec.asr;
        row.mean_similarity = rec.mean_similarity;
        double frac_sum = 0.0;
        size_t frac_n = 0;
        for (const auto& s : rec.samples) {
            if (s.failed || s.record.masked.token_texts.empty()) continue;
            frac_sum += s.record.masked.masked_fraction;
            ++frac_n;
        }
        row.mean_masked_fraction = frac_n ? frac_sum / (double)frac_n : 0.0;
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
    std::ostringstream out;
    out.precision(17);
    out << "epsilon,asr,mean_similarity,mean_masked_fraction\n";
    for (const auto& r : rows)
        out << r.epsilon << ',' << r.asr << ',' << r.mean_similarity << ','
            << r.mean_masked_fraction << '\n';
    return out.str();
}

}  // namespace wmlab
