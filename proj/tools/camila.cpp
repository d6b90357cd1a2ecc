// camila: dataset generation, training, editing, evaluation and checkpoint
// inspection from the command line.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "camila/episode_io.hpp"
#include "camila/trainer.hpp"

namespace fs = std::filesystem;
using namespace camila;

namespace {

constexpr const char* kErrorPrefix = "camila-error";

int fail(const std::string& kind, const std::string& message) {
    std::cerr << kErrorPrefix << ": " << kind << ": " << message << "\n";
    return 2;
}

TrainConfig load_config(const std::string& path) {
    return path.empty() ? TrainConfig{} : parse_train_config(read_file(path));
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir + ": " + ec.message());
    }
}

std::string label_name(TokenLabel l) { return l == TokenLabel::mask ? "MASK" : "NEG"; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-aware instruction-guided image editing at desk scale"};
    app.require_subcommand(1);

    // gen-data
    std::uint64_t gen_seed = 0;
    world::SplitCounts counts;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "Generate synthetic train/val/test episodes");
    gen->add_option("--seed", gen_seed, "Dataset seed");
    gen->add_option("--train", counts.train, "Training episodes");
    gen->add_option("--val", counts.val, "Validation episodes");
    gen->add_option("--test", counts.test, "Test episodes");
    gen->add_option("--out", gen_out, "Output directory")->required();

    // train
    std::string phase, config_path, data_dir, train_out, init_ckpt, train_report;
    auto* train = app.add_subcommand("train", "Run one training phase");
    train->add_option("--phase", phase, "main, surrogate or refine")
        ->required()
        ->check(CLI::IsMember({"main", "surrogate", "refine"}));
    train->add_option("--config", config_path, "key = value configuration file");
    train->add_option("--data", data_dir, "Dataset directory")->required();
    train->add_option("--out", train_out, "Output checkpoint")->required();
    train->add_option("--init", init_ckpt, "Checkpoint of the previous phase");
    train->add_option("--report", train_report, "Write the run report here");

    // edit
    std::string edit_ckpt, edit_episode, edit_image, edit_instructions, edit_out, edit_config;
    std::uint64_t edit_seed_v = 0;
    auto* edit = app.add_subcommand("edit", "Edit one image");
    edit->add_option("--checkpoint", edit_ckpt, "Model checkpoint")->required();
    edit->add_option("--episode", edit_episode, "Episode file");
    edit->add_option("--image", edit_image, "Input image (binary PPM, 64x64)");
    edit->add_option("--instructions", edit_instructions, "Prompt, e.g. \"remove the dot <sep> and ...\"");
    edit->add_option("--out", edit_out, "Output directory")->required();
    edit->add_option("--seed", edit_seed_v, "Sampling seed");
    edit->add_option("--config", edit_config, "Configuration file (guidance scales)");

    // eval
    std::string eval_ckpt, eval_data, eval_split = "test", eval_report, eval_config;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--report", eval_report, "Write the report here (stdout when omitted)");
    eval->add_option("--config", eval_config, "Configuration file (seed, guidance scales)");

    // inspect
    std::string inspect_ckpt;
    auto* inspect = app.add_subcommand("inspect", "Summarise a checkpoint");
    inspect->add_option("checkpoint", inspect_ckpt, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help();
        return fail("usage", e.what());
    }

    try {
        if (*gen) {
            world::build_split(counts, gen_seed, gen_out);
            std::cout << "wrote " << counts.train << "/" << counts.val << "/" << counts.test << " episodes to "
                      << gen_out << "\n";
            return 0;
        }
        if (*train) {
            const TrainConfig cfg = load_config(config_path);
            const char* previous = required_previous_phase(phase);
            std::unique_ptr<Model> model;
            if (*previous == '\0') {
                if (!init_ckpt.empty()) {
                    throw ContractError("the main phase starts from fresh parameters; drop --init");
                }
                model = std::make_unique<Model>(model_config_from(cfg));
            } else {
                if (init_ckpt.empty()) {
                    throw ContractError("phase " + phase + " needs --init with a '" + previous + "' checkpoint");
                }
                auto loaded = load_model(init_ckpt);
                if (loaded.meta.at("phase") != previous) {
                    throw ContractError("phase " + phase + " must follow '" + previous + "', checkpoint is from '" +
                                        loaded.meta.at("phase") + "'");
                }
                model = std::move(loaded.model);
            }
            const auto t0 = std::chrono::steady_clock::now();
            const auto train_set = world::load_split(data_dir, "train");
            RunReport report;
            if (phase == "main") {
                report = train_main(*model, train_set, cfg, &std::cerr);
            } else {
                const auto val_set = world::load_split(data_dir, "val");
                report = phase == "surrogate" ? train_surrogate(*model, train_set, val_set, cfg, &std::cerr)
                                              : train_refine(*model, train_set, val_set, cfg, &std::cerr);
            }
            save_model(*model, phase, train_out);
            if (!train_report.empty()) {
                write_file(train_report, write_report(report));
            }
            std::cerr << "phase " << phase << " finished in "
                      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
            return 0;
        }
        if (*edit) {
            const TrainConfig cfg = load_config(edit_config);
            auto loaded = load_model(edit_ckpt);
            Image scene;
            world::Prompt prompt;
            if (!edit_episode.empty()) {
                const auto ep = world::load_episode(edit_episode);
                scene = ep.scene.image;
                prompt = world::build_prompt(ep.instructions);
            } else {
                if (edit_image.empty() || edit_instructions.empty()) {
                    throw ContractError("edit needs --episode or both --image and --instructions");
                }
                scene = decode_ppm(read_file(edit_image));
                prompt = world::parse_prompt(edit_instructions);
            }
            const auto r = run_edit(*loaded.model, scene, prompt, guidance(cfg), edit_seed_v);
            ensure_dir(edit_out);
            write_file(edit_out + "/edited.ppm", encode_ppm(r.edited));
            export_masks_pgm(r.masks, edit_out);
            std::string labels;
            for (std::size_t i = 0; i < r.labels.size(); ++i) {
                labels += std::to_string(i) + " " + label_name(r.labels[i]) + "\n";
            }
            write_file(edit_out + "/labels.txt", labels);
            std::cout << labels;
            return 0;
        }
        if (*eval) {
            TrainConfig cfg = load_config(eval_config);
            auto loaded = load_model(eval_ckpt);
            const auto eps = world::load_split(eval_data, eval_split);
            const auto report = evaluate(*loaded.model, eps, cfg, eval_split);
            const std::string text = write_report(report);
            if (eval_report.empty()) {
                std::cout << text;
            } else {
                write_file(eval_report, text);
            }
            return 0;
        }
        if (*inspect) {
            auto loaded = load_model(inspect_ckpt);
            for (const auto& [k, v] : loaded.meta) {
                std::cout << k << " = " << v << "\n";
            }
            std::size_t total = 0, trainable = 0;
            for (const auto& e : loaded.model->store.entries()) {
                std::cout << e.name << " " << shape_str(e.tensor.shape()) << (e.trainable ? "" : " frozen") << "\n";
                total += e.tensor.numel();
                trainable += e.trainable ? e.tensor.numel() : 0;
            }
            std::cout << "parameters = " << total << "\n" << "trainable = " << trainable << "\n";
            return 0;
        }
    } catch (const Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return fail("usage", "no subcommand given");
}
