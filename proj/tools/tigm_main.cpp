// tigm: train, generate, infer and evaluate transformation-invariant models.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "tigm/harness.hpp"

namespace {

using tigm::Manifest;

struct ManifestArgs {
    std::string file;
    std::map<std::string, std::string> overrides;
};

// Every manifest key doubles as a --key flag; flags win over the file.
void add_manifest_options(CLI::App* cmd, ManifestArgs& args) {
    cmd->add_option("manifest", args.file, "manifest file (key = value lines)");
    for (const auto& key : Manifest::keys()) {
        cmd->add_option("--" + key.name, args.overrides[key.name], key.help + " [default: " + key.default_value + "]")
            ->group("Manifest keys");
    }
}

Manifest resolve(const CLI::App* cmd, const ManifestArgs& args) {
    Manifest m = args.file.empty() ? Manifest{} : Manifest::load(args.file);
    for (const auto& [key, value] : args.overrides)
        if (cmd->count("--" + key) > 0) m.set(key, value);
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transformation-invariant mixture, factor and hidden Markov models for images"};
    app.require_subcommand(1);

    ManifestArgs train_args;
    bool quiet = false;
    auto* train = app.add_subcommand("train", "fit a model; writes model.tigm, steps.csv and PGM montages");
    add_manifest_options(train, train_args);
    train->add_flag("-q,--quiet", quiet, "no per-iteration log");

    ManifestArgs gen_args;
    auto* gen = app.add_subcommand("gen", "write synthetic frames and truth.csv");
    add_manifest_options(gen, gen_args);

    tigm::InferRequest req;
    std::string task = "score", mode = "soft";
    std::size_t threads = 0;
    bool fast_reduce = false;
    auto* infer = app.add_subcommand("infer", "run a trained model on a directory of PGM frames");
    infer->add_option("--model", req.model, "model file")->required();
    infer->add_option("--frames", req.frames, "directory of PGM frames")->required();
    infer->add_option("--task", task, "denoise | stabilize | track | score | classify")->capture_default_str();
    infer->add_option("--output", req.output, "output directory (denoise, stabilize) or CSV file")->required();
    infer->add_option("--mode", mode, "denoise: soft | hard")->capture_default_str();
    infer->add_flag("--viterbi", req.viterbi, "track: joint MAP path instead of per-frame modes");
    infer->add_option("--threads", threads, "worker threads (0: TIGM_THREADS or all cores)");
    infer->add_flag("--fast-reduce", fast_reduce, "allow thread-count-dependent summation order");

    std::string pred, truth, eval_mode = "classification";
    std::pair<int, int> wrap{0, 0};
    auto* eval = app.add_subcommand("eval", "compare predictions with ground truth");
    eval->add_option("--pred", pred, "predictions CSV")->required();
    eval->add_option("--truth", truth, "ground-truth CSV")->required();
    eval->add_option("--mode", eval_mode, "classification | clustering | tracking")->capture_default_str();
    eval->add_option("--wrap", wrap, "tracking: compare shifts modulo HEIGHT WIDTH");

    auto* keys = app.add_subcommand("keys", "list manifest keys with their defaults");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const auto art = tigm::cmd_train(resolve(train, train_args), quiet ? nullptr : &std::cerr);
            std::cout << "loglik " << art.outcome.loglik << "\n";
            for (const auto& f : art.files) std::cout << f.string() << "\n";
        } else if (*gen) {
            for (const auto& f : tigm::cmd_gen(resolve(gen, gen_args))) std::cout << f.string() << "\n";
        } else if (*infer) {
            req.task = tigm::infer_task_from_string(task);
            if (mode == "soft") req.mode = tigm::DenoiseMode::Soft;
            else if (mode == "hard") req.mode = tigm::DenoiseMode::Hard;
            else throw tigm::ContractViolation("--mode: expected soft or hard, got '" + mode + "'");
            req.parallel.threads = threads;
            req.parallel.deterministic = !fast_reduce;
            const auto res = tigm::cmd_infer(req);
            std::cout << "frames " << res.frames << "\n";
            if (req.task == tigm::InferTask::Score) std::cout << "loglik " << res.loglik << "\n";
            for (const auto& f : res.files) std::cout << f.string() << "\n";
        } else if (*eval) {
            std::cout << tigm::cmd_eval(pred, truth, tigm::eval_mode_from_string(eval_mode), wrap).to_text();
        } else if (*keys) {
            for (const auto& k : Manifest::keys())
                std::cout << k.name << " = " << k.default_value << "    # " << k.help << "\n";
        }
    } catch (const tigm::ManifestError& e) {
        std::cerr << "tigm: manifest error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "tigm: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
