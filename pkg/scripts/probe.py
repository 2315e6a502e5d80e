"""Hyperparameter probe for desk-scale runs; prints eval curves per config."""
import sys
import time

from liemem import models, tasks, training


def run(task, kind, weighting, lr, decay, passes, seed, stop=0.9, init="fan_in",
        low=2, high=8, vocab=16, samples=8000, **model_over):
    spec = tasks.task_spec(task, low=low, high=high, vocab=vocab)
    mcfg = models.default_config(kind, vocab=vocab, weighting=weighting, **model_over)
    tcfg = training.TrainConfig(
        lr=lr, decay_delay=decay, total_samples=samples, passes=passes,
        eval_every=250, eval_size=320, final_eval_size=3200,
        stop_coarse=stop, seed=seed, init_scheme=init,
    )
    t0 = time.monotonic()
    rec, _ = training.run_training(mcfg, tcfg, spec)
    curve = " ".join(f"{e['update']}:{e['coarse']:.2f}" for e in rec.evals)
    print(
        f"[{task} {kind}/{weighting} lr={lr} decay={decay} init={init} seed={seed}] "
        f"status={rec.status} updates={rec.updates} final fine={rec.final_fine:.3f} "
        f"coarse={rec.final_coarse:.3f} wall={time.monotonic()-t0:.0f}s\n  curve: {curve}",
        flush=True,
    )
    return rec


if __name__ == "__main__":
    which = sys.argv[1]
    if which == "a":
        run("copy", "lantm", "inverse_square", lr=0.02, decay=1500, passes=40, seed=1)
        run("copy", "lantm", "inverse_square", lr=0.04, decay=1500, passes=40, seed=1)
    elif which == "b":
        run("copy", "lantm", "inverse_square", lr=0.01, decay=0, passes=40, seed=1)
        run("copy", "lantm", "inverse_square", lr=0.02, decay=1500, passes=40, seed=2)
    elif which == "copy3":
        for seed in (2, 3):
            run("copy", "lantm", "inverse_square", lr=0.04, decay=1500, passes=20, seed=seed, stop=0.95)
    elif which == "rev":
        for seed in (1, 2, 3):
            run("reverse", "slantm", "inverse_square", lr=0.04, decay=1500, passes=20, seed=seed, stop=0.9)
    elif which == "lstmbase":
        run("copy", "lstm", "", lr=0.001, decay=1500, passes=20, seed=1, stop=0.99)
    elif which == "revmatrix":
        run("copy", "slantm", "inverse_square", lr=0.02, decay=1500, passes=15, seed=1, stop=0.85)
        run("reverse", "slantm", "inverse_square", lr=0.02, decay=1500, passes=15, seed=1, stop=0.82, angle_bound=False)
        run("reverse", "slantm", "inverse_square", lr=0.01, decay=1500, passes=15, seed=1, stop=0.82)
        run("reverse", "slantm", "inverse_square", lr=0.02, decay=1500, passes=15, seed=1, stop=0.82, init="uniform")
    elif which == "revlong1":
        run("reverse", "slantm", "inverse_square", lr=0.01, decay=2500, passes=40, seed=1, stop=0.85)
    elif which == "revlong2":
        run("reverse", "slantm", "inverse_square", lr=0.02, decay=2500, passes=40, seed=1, stop=0.85)
    elif which == "revsweep":
        run("reverse", "slantm", "inverse_square", lr=0.04, decay=1500, passes=12, seed=1, stop=0.82)
        run("reverse", "slantm", "inverse_square", lr=0.01, decay=1500, passes=12, seed=1, stop=0.82)
        run("reverse", "slantm", "inverse_square", lr=0.02, decay=1500, passes=12, seed=2, stop=0.82)
    elif which == "revinterp":
        run("reverse", "slantm", "inverse_square", lr=0.02, decay=1500, passes=12, seed=1, stop=0.82,
            action_interpolation=True)
        run("reverse", "lantm", "inverse_square", lr=0.04, decay=1500, passes=12, seed=1, stop=0.82,
            action_interpolation=True)
        run("reverse", "slantm", "inverse_square", lr=0.01, decay=1500, passes=12, seed=1, stop=0.82,
            action_interpolation=True)
    elif which == "revmatrix2":
        run("reverse", "lantm", "inverse_square", lr=0.04, decay=1500, passes=15, seed=1, stop=0.85)
        run("reverse", "slantm", "inverse_square", lr=0.02, decay=1500, passes=15, seed=1, stop=0.82)
        run("reverse", "slantm", "inverse_square", lr=0.04, decay=1500, passes=15, seed=1, stop=0.82, angle_bound=False)
        run("reverse", "slantm", "inverse_square", lr=0.04, decay=1500, passes=15, seed=1, stop=0.82, init="uniform")
