// artseg: command-line front end for training, evaluation, inference,
// gradient checking, and synthetic-data generation.
//
// All randomness flows from --seed; with ARTSEG_THREADS unset or 0 every
// command is single-threaded and byte-reproducible.

#include <CLI11.hpp>

#include <artseg/dataset.hpp>
#include <artseg/gradcheck_suite.hpp>
#include <artseg/run_config.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace artseg;

namespace {

struct CommonFlags {
    std::string config, data, out;
    std::uint64_t seed = 0;
    int epochs = 0, batch = 0, classes = 0, size = 0;
    double lr = 0.0, width = 0.0;
    CLI::Option *o_config = nullptr, *o_data = nullptr, *o_out = nullptr, *o_seed = nullptr,
                *o_epochs = nullptr, *o_lr = nullptr, *o_batch = nullptr, *o_classes = nullptr,
                *o_width = nullptr, *o_size = nullptr;

    void add_to(CLI::App* cmd) {
        o_config = cmd->add_option("--config", config,
                                   "configuration file: key = value lines, # comments");
        o_data = cmd->add_option("--data", data, "dataset root directory");
        o_out = cmd->add_option("--out", out, "output directory (default artseg_out)");
        o_seed = cmd->add_option("--seed", seed, "seed for all randomness (default 0)");
        o_epochs = cmd->add_option("--epochs", epochs, "training epochs (default 100)");
        o_lr = cmd->add_option("--lr", lr, "base learning rate (default 5e-4)");
        o_batch = cmd->add_option("--batch", batch, "batch size (default 4)");
        o_classes = cmd->add_option("--classes", classes, "number of classes (default 9)");
        o_width = cmd->add_option("--width", width, "channel width multiplier (default 1.0)");
        o_size = cmd->add_option("--size", size,
                                 "input resize target, multiple of 32 (default 256)");
    }

    // defaults < config file < explicit flags
    RunConfig merge(bool validate = true) const {
        RunConfig cfg;
        if (o_config->count()) apply_config_file(cfg, config);
        if (o_data->count()) cfg.data = data;
        if (o_out->count()) cfg.out = out;
        if (o_seed->count()) cfg.seed = seed;
        if (o_epochs->count()) cfg.epochs = epochs;
        if (o_lr->count()) cfg.lr = lr;
        if (o_batch->count()) cfg.batch = batch;
        if (o_classes->count()) cfg.classes = classes;
        if (o_width->count()) cfg.width = width;
        if (o_size->count()) cfg.size = size;
        if (validate) cfg.validate();
        return cfg;
    }
};

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write '" + path + "'");
    f << content;
}

int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = flags.merge();
    (void)read_thread_cap();
    if (cfg.data.empty())
        throw ConfigError("train needs a dataset root: --data PATH or data = PATH in the config");

    Dataset ds = Dataset::scan(cfg.data, cfg.classes);
    std::cout << "dataset '" << cfg.data << "': " << ds.ids(Split::train).size() << " train, "
              << ds.ids(Split::test_day).size() << " test-day, "
              << ds.ids(Split::test_night).size() << " test-night\n";
    auto train_set = ds.load_split(Split::train, cfg.size, cfg.size);

    ARTSegModel<float> model(cfg.model_config());
    model.init_parameters(cfg.seed);
    std::cout << "model: " << model.parameter_count() << " parameters, width " << cfg.width
              << ", " << cfg.classes << " classes\n";

    Trainer<float> trainer(model, std::move(train_set), cfg.train_config());

    // configuration fully validated; outputs may now be created
    fs::create_directories(cfg.out);
    auto history = trainer.train(cfg.out, [&](const EpochRecord& r) {
        std::cout << "epoch " << r.epoch + 1 << "/" << cfg.epochs << "  loss " << r.mean_loss
                  << "  lr " << r.lr << "\n";
    });
    write_text_file((fs::path(cfg.out) / "history.csv").string(), history_csv(history));
    std::cout << "wrote " << (fs::path(cfg.out) / "history.csv").string() << " and "
              << (fs::path(cfg.out) / "model_final.ckpt").string() << "\n";
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint, const std::string& split) {
    RunConfig cfg = flags.merge();
    (void)read_thread_cap();
    if (cfg.data.empty())
        throw ConfigError("eval needs a dataset root: --data PATH or data = PATH in the config");
    if (split != "train" && split != "test" && split != "test_day" && split != "test_night")
        throw UsageError("unknown split '" + split +
                         "'; valid names: train, test, test_day, test_night");

    Dataset ds = Dataset::scan(cfg.data, cfg.classes);
    ARTSegModel<float> model(cfg.model_config());
    load_model_checkpoint(model, checkpoint);

    std::vector<std::string> ids;
    if (split == "train")
        ids = ds.ids(Split::train);
    else if (split == "test_day")
        ids = ds.ids(Split::test_day);
    else if (split == "test_night")
        ids = ds.ids(Split::test_night);
    else
        ids = ds.test_ids();  // union of day and night
    if (ids.empty()) throw ConfigError("split '" + split + "' is empty");

    auto samples = ds.load_ids(ids, cfg.size, cfg.size);
    const Palette palette = Palette::for_classes(cfg.classes);
    const MetricsReport report = evaluate(model, samples, palette.names);

    std::cout << "split " << split << " (" << ids.size() << " frames)\n"
              << report.to_text() << "pixel accuracy " << report.pixel_acc << "\n";
    fs::create_directories(cfg.out);
    const std::string csv_path = (fs::path(cfg.out) / ("report_" + split + ".csv")).string();
    write_text_file(csv_path, report.to_csv());
    std::cout << "wrote " << csv_path << "\n";
    return 0;
}

int cmd_infer(const CommonFlags& flags, const std::string& checkpoint,
              const std::vector<std::string>& images) {
    RunConfig cfg = flags.merge();
    (void)read_thread_cap();
    ARTSegModel<float> model(cfg.model_config());
    load_model_checkpoint(model, checkpoint);
    const Palette palette = Palette::for_classes(cfg.classes);
    fs::create_directories(cfg.out);

    int failures = 0;
    for (const std::string& path : images) {
        try {
            const GrayImage raw = read_gray_png(path);
            const FloatImage scaled = resize_bilinear(gray_to_float(raw), cfg.size, cfg.size);
            Tensor<float> input(Shape{1, 1, cfg.size, cfg.size});
            auto iv = input.values();
            for (std::size_t i = 0; i < scaled.values.size(); ++i) iv[i] = scaled.values[i];
            const Tensor<float> logits = model.forward(input, Mode::eval);
            IndexMap pred = argmax_classes(logits)[0];
            // back to the source resolution; class indices stay intact
            pred = resize_nearest(pred, raw.height, raw.width);

            const std::string stem = fs::path(path).stem().string();
            const std::string pred_path = (fs::path(cfg.out) / (stem + "_pred.png")).string();
            const std::string vis_path = (fs::path(cfg.out) / (stem + "_vis.png")).string();
            write_gray8_png(pred_path, pred.height, pred.width, pred.values);
            render_prediction(pred, palette, vis_path);
            std::cout << path << " -> " << pred_path << ", " << vis_path << "\n";
        } catch (const Error& e) {
            std::cerr << "artseg: " << path << ": " << e.what() << "\n";
            ++failures;
        }
    }
    if (failures > 0)
        std::cerr << "artseg: " << failures << " of " << images.size() << " images failed\n";
    return failures == 0 ? 0 : 1;
}

int cmd_gradcheck(const CommonFlags& flags) {
    RunConfig cfg = flags.merge();
    (void)read_thread_cap();
    const std::uint64_t seed = flags.o_seed->count() ? cfg.seed : 20240901ull;
    const auto rows = run_gradient_checks(seed);
    std::cout << format_gradcheck_report(rows);
    const bool ok = all_passed(rows);
    std::cout << (ok ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
    return ok ? 0 : 1;
}

int cmd_synth(const CommonFlags& flags, int count) {
    RunConfig cfg = flags.merge(/*validate=*/false);
    (void)read_thread_cap();
    // synth has its own size rule: any generation size >= 8 works, the
    // loader resizes to a /32 multiple later
    if (cfg.size < 8) throw ConfigError("synth size must be >= 8");
    if (cfg.classes < 2 || cfg.classes > 200)
        throw ConfigError("synth classes must lie in [2, 200]");
    if (count < 1) throw ConfigError("synth needs -n >= 1");
    const std::string root = cfg.out;
    auto ids = synth_generate(root, count, cfg.size, cfg.size, cfg.classes, cfg.seed);
    std::cout << "generated " << ids.size() << " samples (" << cfg.size << "x" << cfg.size << ", "
              << cfg.classes << " classes, seed " << cfg.seed << ") under " << root << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "artseg: recurrent-residual attention encoder-decoder for thermal-image "
        "semantic segmentation.\nEnvironment: ARTSEG_THREADS caps the worker count "
        "(0 or unset = single-threaded deterministic mode)."};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "train a model on a dataset");
    CommonFlags train_flags;
    train_flags.add_to(train);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    CommonFlags eval_flags;
    eval_flags.add_to(eval);
    std::string eval_checkpoint, eval_split = "test";
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file to evaluate")->required();
    eval->add_option("--split", eval_split,
                     "split to score: train, test, test_day, test_night (default test)");

    auto* infer = app.add_subcommand("infer", "segment images with a checkpoint");
    CommonFlags infer_flags;
    infer_flags.add_to(infer);
    std::string infer_checkpoint;
    std::vector<std::string> infer_images;
    infer->add_option("--checkpoint", infer_checkpoint, "checkpoint file")->required();
    infer->add_option("images", infer_images, "grayscale PNG images to segment")->required();

    auto* gradcheck = app.add_subcommand(
        "gradcheck", "verify every backward rule against finite differences");
    CommonFlags gradcheck_flags;
    gradcheck_flags.add_to(gradcheck);

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset under --out");
    CommonFlags synth_flags;
    synth_flags.add_to(synth);
    int synth_count = 4;
    synth->add_option("-n,--count", synth_count, "number of samples (default 4)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_flags);
        if (eval->parsed()) return cmd_eval(eval_flags, eval_checkpoint, eval_split);
        if (infer->parsed()) return cmd_infer(infer_flags, infer_checkpoint, infer_images);
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_flags);
        if (synth->parsed()) return cmd_synth(synth_flags, synth_count);
    } catch (const Error& e) {
        std::cerr << "artseg: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "artseg: unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
