// Acceptance suite: runs every acceptance criterion end to end and prints
// one PASS/FAIL line per criterion. Exit code 0 only if all criteria hold.
//
// Usage: acceptance <path-to-artseg-cli>

#include <artseg/dataset.hpp>
#include <artseg/gradcheck_suite.hpp>

#include <chrono>
#include <iostream>

#include "subprocess.hpp"

using namespace artseg;
using testutil::run_command;
using testutil::slurp;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << title;
    if (!detail.empty()) std::cout << " -- " << detail;
    std::cout << std::endl;
    if (!ok) ++g_failures;
}

template <typename Fn>
void criterion(int id, const std::string& title, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        report(id, title, false, e.what());
    }
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <path-to-artseg-binary>\n";
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path work =
        fs::temp_directory_path() / ("artseg_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(work);

    // ------------------------------------------------------------------ 1
    criterion(1, "gradient correctness (cmd_gradcheck, double precision)", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        auto r = run_command(cli + " gradcheck");
        const bool ok = r.exit_code == 0 && r.out.find("artseg_model") != std::string::npos &&
                        r.out.find("FAIL") == std::string::npos;
        report(1, "gradient correctness (cmd_gradcheck, double precision)", ok,
               "exit " + std::to_string(r.exit_code) + ", " + fmt(elapsed_s(t0)) + "s");
    });

    // ------------------------------------------------------------------ 2
    criterion(2, "shape conformance on 1x1x256x256", [&] {
        ARTSegModel<float> model((ARTSegConfig()));  // full width, 9 classes
        model.init_parameters(1);
        ForwardTrace<float> trace;
        Tensor<float> x(Shape{1, 1, 256, 256});
        model.forward(x, Mode::eval, &trace);
        const std::vector<std::pair<std::string, Shape>> want = {
            {"Input", {1, 1, 256, 256}},        {"RRCNN-1", {1, 32, 256, 256}},
            {"MaxPool-1", {1, 32, 128, 128}},   {"RRCNN-2", {1, 64, 128, 128}},
            {"MaxPool-2", {1, 64, 64, 64}},     {"RRCNN-3", {1, 128, 64, 64}},
            {"MaxPool-3", {1, 128, 32, 32}},    {"RRCNN-4", {1, 256, 32, 32}},
            {"MaxPool-4", {1, 256, 8, 8}},      {"RCNN-5", {1, 256, 8, 8}},
            {"UpBlock-1", {1, 128, 32, 32}},    {"Attention-1", {1, 256, 32, 32}},
            {"RRCNN-4-dec", {1, 128, 32, 32}},  {"UpBlock-2", {1, 128, 64, 64}},
            {"Attention-2", {1, 256, 64, 64}},  {"RRCNN-3-dec", {1, 128, 64, 64}},
            {"UpBlock-3", {1, 64, 128, 128}},   {"Attention-3", {1, 128, 128, 128}},
            {"RRCNN-2-dec", {1, 64, 128, 128}}, {"UpBlock-4", {1, 32, 256, 256}},
            {"Attention-4", {1, 64, 256, 256}}, {"RRCNN-1-dec", {1, 32, 256, 256}},
            {"Conv1x1", {1, 9, 256, 256}},  // table prints 5 channels; head emits C=9
        };
        bool ok = trace.layers.size() == want.size();
        std::string detail;
        for (std::size_t i = 0; ok && i < want.size(); ++i) {
            if (trace.layers[i].first != want[i].first ||
                trace.layers[i].second != want[i].second) {
                ok = false;
                detail = "row " + std::to_string(i) + " (" + trace.layers[i].first + ") is " +
                         shape_str(trace.layers[i].second) + ", expected " +
                         shape_str(want[i].second);
            }
        }
        if (ok) detail = std::to_string(want.size()) + " rows match the layer table";
        report(2, "shape conformance on 1x1x256x256", ok, detail);
    });

    // ------------------------------------------------------------------ 3
    criterion(3, "loss sanity: uniform logits and zero class-axis gradient sum", [&] {
        Tensor<double> uniform(Shape{1, 9, 8, 8});
        std::vector<std::uint8_t> labels(64);
        Rng rng(5);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(9));
        const double loss = softmax_cross_entropy(uniform, labels).item();
        const bool loss_ok = std::abs(loss - std::log(9.0)) < 1e-5;

        // gradient property on non-trivial logits
        Tensor<double> logits(Shape{2, 9, 8, 8});
        for (auto& v : logits.values()) v = rng.uniform(-4.0, 4.0);
        std::vector<std::uint8_t> labels2(2 * 64);
        for (auto& l : labels2) l = static_cast<std::uint8_t>(rng.below(9));
        Tape<double> tape;
        Tensor<double> l2;
        {
            auto scope = tape.activate();
            tape.watch(logits);
            l2 = softmax_cross_entropy(logits, labels2);
        }
        tape.backward(l2);
        double worst = 0.0;
        auto g = logits.grad();
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 64; ++i) {
                double s = 0.0;
                for (int c = 0; c < 9; ++c)
                    s += g[(static_cast<std::size_t>(b) * 9 + c) * 64 + i];
                worst = std::max(worst, std::abs(s));
            }
        const bool grad_ok = worst < 1e-6;
        report(3, "loss sanity: uniform logits and zero class-axis gradient sum",
               loss_ok && grad_ok,
               "loss " + fmt(loss) + " vs ln 9 = " + fmt(std::log(9.0)) + ", worst axis sum " +
                   fmt(worst));
    });

    // ------------------------------------------------------------------ 4
    criterion(4, "metric oracle equivalence over 1000 random frames", [&] {
        Rng rng(99);
        double worst = 0.0;
        bool ok = true;
        for (int trial = 0; trial < 1000 && ok; ++trial) {
            IndexMap pred(8, 8), gt(8, 8);
            for (auto& v : pred.values) v = static_cast<std::uint8_t>(rng.below(9));
            for (auto& v : gt.values) v = static_cast<std::uint8_t>(rng.below(9));
            ConfusionMatrix cm(9);
            cm.accumulate(pred, gt);

            // brute-force per-pixel oracle
            std::array<std::int64_t, 9> tp{}, fn{}, fp{};
            for (int i = 0; i < 64; ++i) {
                const int p = pred.values[static_cast<std::size_t>(i)];
                const int g = gt.values[static_cast<std::size_t>(i)];
                if (p == g) {
                    ++tp[g];
                } else {
                    ++fn[g];
                    ++fp[p];
                }
            }
            double acc_sum = 0.0, iou_sum = 0.0;
            int acc_n = 0, iou_n = 0;
            for (int c = 0; c < 9; ++c) {
                if (tp[c] + fn[c] > 0) {
                    acc_sum += double(tp[c]) / double(tp[c] + fn[c]);
                    ++acc_n;
                }
                if (tp[c] + fn[c] + fp[c] > 0) {
                    iou_sum += double(tp[c]) / double(tp[c] + fn[c] + fp[c]);
                    ++iou_n;
                }
            }
            const double da = std::abs(avg_acc(cm) - acc_sum / acc_n);
            const double di = std::abs(mean_iou(cm) - iou_sum / iou_n);
            worst = std::max({worst, da, di});
            if (da > 1e-12 || di > 1e-12) ok = false;
        }
        report(4, "metric oracle equivalence over 1000 random frames", ok,
               "worst deviation " + fmt(worst));
    });

    // ------------------------------------------------------------------ 5
    // The trained model and data stay live for criterion 9.
    ARTSegConfig overfit_cfg;
    overfit_cfg.num_classes = 3;
    overfit_cfg.width_multiplier = 0.25;
    ARTSegModel<float> overfit_model(overfit_cfg);
    std::vector<TrainSample> overfit_samples;
    bool overfit_reached = false;

    criterion(5, "overfit: 4 synthetic frames to >=99% pixel accuracy, IoU >= 0.95", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const std::string root = (work / "overfit_data").string();
        synth_generate(root, 4, 64, 64, 3, 7);
        Dataset ds = Dataset::scan(root, 3);
        overfit_samples = ds.load_split(Split::train, 64, 64);

        overfit_model.init_parameters(7);
        TrainConfig tc;  // reference hyperparameters: lr 5e-4, Adam, wd 1e-4, poly 0.9
        tc.total_epochs = 300;
        tc.batch_size = 4;
        tc.seed = 7;
        Trainer<float> trainer(overfit_model, overfit_samples, tc);
        const Palette palette = Palette::for_classes(3);

        double acc = 0.0, iou = 0.0;
        int reached_at = -1;
        for (int e = 0; e < tc.total_epochs; ++e) {
            trainer.run_epoch(e);
            if ((e + 1) % 10 == 0) {
                const MetricsReport rep = evaluate(overfit_model, trainer.samples(),
                                                   palette.names);
                acc = rep.pixel_acc;
                iou = rep.mean_iou;
                if (acc >= 0.99 && iou >= 0.95) {
                    reached_at = e + 1;
                    break;
                }
            }
        }
        overfit_reached = reached_at > 0;
        report(5, "overfit: 4 synthetic frames to >=99% pixel accuracy, IoU >= 0.95",
               overfit_reached,
               "pixel acc " + fmt(acc) + ", mean IoU " + fmt(iou) +
                   (overfit_reached ? ", reached at epoch " + std::to_string(reached_at) : "") +
                   ", " + fmt(elapsed_s(t0)) + "s");
    });

    // ------------------------------------------------------------------ 6
    criterion(6, "polynomial LR schedule endpoints and midpoint", [&] {
        TrainConfig tc;
        tc.total_epochs = 100;
        const double d0 = std::abs(poly_lr(0, tc) - 5e-4);
        const double dm = std::abs(poly_lr(50, tc) - 5e-4 * std::pow(0.5, 0.9));
        const double d1 = std::abs(poly_lr(100, tc) - 0.0);
        const bool ok = d0 < 1e-9 && dm < 1e-9 && d1 < 1e-9;
        report(6, "polynomial LR schedule endpoints and midpoint", ok,
               "deviations " + fmt(d0) + ", " + fmt(dm) + ", " + fmt(d1));
    });

    // ------------------------------------------------------------------ 7
    criterion(7, "bitwise deterministic training under one seed", [&] {
        const std::string root = (work / "det_data").string();
        synth_generate(root, 4, 64, 64, 3, 21);
        Dataset ds = Dataset::scan(root, 3);
        auto samples = ds.load_split(Split::train, 64, 64);

        auto run = [&](const std::string& ckpt) {
            ARTSegConfig mc;
            mc.num_classes = 3;
            mc.width_multiplier = 0.25;
            ARTSegModel<float> model(mc);
            model.init_parameters(42);
            TrainConfig tc;
            tc.total_epochs = 3;
            tc.batch_size = 2;
            tc.seed = 42;
            Trainer<float> trainer(model, samples, tc);
            auto hist = trainer.train();
            trainer.save_checkpoint(ckpt);
            return hist;
        };
        const auto h1 = run((work / "det_a.ckpt").string());
        const auto h2 = run((work / "det_b.ckpt").string());
        bool ok = h1.size() == h2.size();
        for (std::size_t i = 0; ok && i < h1.size(); ++i)
            ok = h1[i].mean_loss == h2[i].mean_loss && h1[i].lr == h2[i].lr;
        const bool files_equal =
            slurp(work / "det_a.ckpt") == slurp(work / "det_b.ckpt") &&
            !slurp(work / "det_a.ckpt").empty();
        report(7, "bitwise deterministic training under one seed", ok && files_equal,
               std::string("histories ") + (ok ? "identical" : "differ") + ", checkpoints " +
                   (files_equal ? "byte-identical" : "differ"));
    });

    // ------------------------------------------------------------------ 8
    criterion(8, "checkpoint round trip and header-corruption rejection", [&] {
        ARTSegConfig mc;
        mc.num_classes = 3;
        mc.width_multiplier = 0.25;
        ARTSegModel<float> model(mc);
        model.init_parameters(17);
        const std::string path = (work / "roundtrip.ckpt").string();
        save_model_checkpoint(model, path);

        Rng rng(23);
        Tensor<float> x(Shape{1, 1, 64, 64});
        for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
        const Tensor<float> before = model.forward(x, Mode::eval);

        ARTSegModel<float> restored(mc);
        restored.init_parameters(999);
        load_model_checkpoint(restored, path);
        const Tensor<float> after = restored.forward(x, Mode::eval);
        bool bitwise = before.shape() == after.shape();
        if (bitwise)
            bitwise = std::memcmp(before.values().data(), after.values().data(),
                                  before.values().size() * sizeof(float)) == 0;

        // flip one byte inside the 8-byte header (magic + version)
        std::string bytes = slurp(path);
        bytes[2] ^= 0x40;
        const std::string bad = (work / "corrupt.ckpt").string();
        std::ofstream(bad, std::ios::binary).write(bytes.data(),
                                                   static_cast<std::streamsize>(bytes.size()));
        bool rejected = false;
        try {
            read_checkpoint(bad);
        } catch (const CheckpointError&) {
            rejected = true;
        }
        report(8, "checkpoint round trip and header-corruption rejection", bitwise && rejected,
               std::string("round trip ") + (bitwise ? "bitwise" : "differs") +
                   ", corruption " + (rejected ? "rejected" : "accepted"));
    });

    // ------------------------------------------------------------------ 9
    criterion(9, "attention coefficients: 0.5 at zero init, open interval after training", [&] {
        // zero-initialized gates: alpha is exactly one half everywhere
        ARTSegConfig mc;
        mc.num_classes = 3;
        mc.width_multiplier = 0.25;
        ARTSegModel<float> zero_model(mc);  // constructed weights are all zero
        ForwardTrace<float> trace;
        Tensor<float> x(Shape{1, 1, 64, 64});
        Rng rng(31);
        for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
        zero_model.forward(x, Mode::eval, &trace);
        bool half_ok = trace.alphas.size() == 4;
        for (const auto& alpha : trace.alphas)
            for (float a : alpha.values())
                if (a != 0.5f) half_ok = false;

        // after the overfit run: strictly inside (0,1) at every pixel
        bool open_ok = overfit_reached && !overfit_samples.empty();
        if (open_ok) {
            for (const auto& sample : overfit_samples) {
                Tensor<float> img(Shape{1, 1, sample.image.height, sample.image.width});
                auto iv = img.values();
                for (std::size_t i = 0; i < sample.image.values.size(); ++i)
                    iv[i] = sample.image.values[i];
                ForwardTrace<float> tr;
                overfit_model.forward(img, Mode::eval, &tr);
                for (const auto& alpha : tr.alphas)
                    for (float a : alpha.values())
                        if (!(a > 0.0f && a < 1.0f)) open_ok = false;
            }
        }
        report(9, "attention coefficients: 0.5 at zero init, open interval after training",
               half_ok && open_ok,
               std::string("zero-init ") + (half_ok ? "exact" : "violated") +
                   ", trained gates " + (open_ok ? "inside (0,1)" : "violated or untrained"));
    });

    // ------------------------------------------------------------------ 10
    criterion(10, "end-to-end CLI train/eval on a dataset in the documented layout", [&] {
        const std::string root = (work / "cli_data").string();
        auto r_synth = run_command(cli + " synth -n 8 --size 64 --classes 3 --seed 13 --out " +
                                   root);
        if (r_synth.exit_code != 0) throw Error("synth failed: " + r_synth.err);
        {
            // rearrange into 4 train / 2 day / 2 night, per the split files
            std::ofstream tr(fs::path(root) / "splits" / "train.txt");
            tr << "synth_0000\nsynth_0001\nsynth_0002\nsynth_0003\n";
            std::ofstream day(fs::path(root) / "splits" / "test_day.txt");
            day << "synth_0004\nsynth_0005\n";
            std::ofstream night(fs::path(root) / "splits" / "test_night.txt");
            night << "synth_0006\nsynth_0007\n";
        }
        const std::string out = (work / "cli_run").string();
        auto r_train = run_command(cli + " train --data " + root + " --out " + out +
                                   " --epochs 2 --classes 3 --width 0.25 --size 64 --seed 3");
        if (r_train.exit_code != 0) throw Error("train failed: " + r_train.err);

        bool ok = fs::exists(fs::path(out) / "history.csv") &&
                  fs::exists(fs::path(out) / "model_final.ckpt");
        std::string detail = "train ok";
        for (const std::string split : {"test", "test_day", "test_night"}) {
            auto r_eval = run_command(cli + " eval --data " + root + " --checkpoint " + out +
                                      "/model_final.ckpt --classes 3 --width 0.25 --size 64" +
                                      " --out " + out + " --split " + split);
            if (r_eval.exit_code != 0) {
                ok = false;
                detail = "eval " + split + " failed: " + r_eval.err;
                break;
            }
            const std::string csv = slurp(fs::path(out) / ("report_" + split + ".csv"));
            // the report table carries per-class rows plus the two aggregates
            if (csv.rfind("class,pixels,acc,iou", 0) != 0 ||
                csv.find("class_0") == std::string::npos ||
                csv.find("Avg.Acc,") == std::string::npos ||
                csv.find("IoU,") == std::string::npos) {
                ok = false;
                detail = "report_" + split + ".csv is not a class/Avg.Acc/IoU table";
                break;
            }
        }
        report(10, "end-to-end CLI train/eval on a dataset in the documented layout", ok, detail);
    });

    fs::remove_all(work);
    std::cout << (g_failures == 0 ? "ACCEPTANCE: all criteria passed"
                                  : "ACCEPTANCE: " + std::to_string(g_failures) +
                                        " criteria failed")
              << std::endl;
    return g_failures == 0 ? 0 : 1;
}
