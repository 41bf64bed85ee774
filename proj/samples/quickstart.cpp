// Generate a small synthetic corpus, meta-train briefly, then adapt to one
// latest-period task with and without knowledge inheritance.

#include <cstdio>

#include "mise/protocols.hpp"
#include "mise/synth.hpp"

int main() {
    using namespace mise;

    SynthConfig sc;
    sc.posts_per_period = 60;
    sc.seed = 1;
    const Dataset data = Dataset::build(generate_corpus(sc).corpus);
    const TimeSplit split = split_periods(data);
    std::printf("past periods: %zu, latest: %s (%zu labeled posts)\n", split.num_past(), split.latest_label.c_str(),
                split.latest.size());

    ModelConfig model;
    model.vocab_size = data.vocab.size();
    model.embed_dim = 16;
    model.hidden_dim = 16;

    TrainConfig cfg;
    cfg.max_steps = 60;
    cfg.snapshot_every = 20;
    cfg.seed = 7;
    const TrainResult trained = meta_train(data, split, model, cfg, [](const Snapshot& s) {
        std::printf("step %3zu  adapted validation loss %.4f\n", s.step, s.validation_loss);
    });

    EvalOptions opt;
    opt.k = 5;
    opt.episodes = 5;
    const EvalSection mise = kshot_eval(trained.checkpoint, data, split, cfg, opt);
    opt.method = AdaptMethod::fine_tune;
    const EvalSection plain = kshot_eval(trained.checkpoint, data, split, cfg, opt);
    std::printf("5-shot query F1: inheritance %.4f, fine-tune %.4f\n", mise.f1.mean, plain.f1.mean);
}
