"""Sweep LIV training hyperparameters for curve quality + BC feasibility (scratch)."""
import time

import numpy as np

from livkit import data, encoders, objectives, policy, reward, training

t0 = time.time()
train_ds = data.generate_dataset(data.GenConfig(episodes=400, policy="expert", horizon=40, seed=7))
held_ds = data.generate_dataset(data.GenConfig(episodes=40, policy="expert", horizon=40, seed=1007))


def curves(model):
    img_sp, txt_sp = [], []
    for v in held_ds.videos:
        c_img = reward.cost_curve(model, v.frames, reward.ImageGoal(v.goal_frame))
        c_txt = reward.cost_curve(model, v.frames, reward.TextGoal(v.token_ids))
        img_sp.append(reward.curve_metrics(c_img)["spearman"])
        txt_sp.append(reward.curve_metrics(c_txt)["spearman"])
    return float(np.mean(img_sp)), float(np.mean(txt_sp))


results = {}
for lr in (1e-4, 3e-4):
    for p_deg in (0.0, 0.1):
        cfg = training.TrainConfig(
            objective="liv", steps=2000, batch=64, lr=lr, seed=0,
            loss=objectives.LossConfig(gamma=0.98, p_degenerate=p_deg),
        )
        res = training.train(train_ds, cfg)
        i_sp, t_sp = curves(res.model)
        loss0, lossN = res.metrics[0]["loss"], res.metrics[-1]["loss"]
        print(f"[{time.time()-t0:6.0f}s] lr={lr} p_deg={p_deg}: loss {loss0:.3f}->{lossN:.3f} "
              f"img_sp={i_sp:.3f} txt_sp={t_sp:.3f}", flush=True)
        results[(lr, p_deg)] = (res.model, i_sp, t_sp)

# BC on the best curve model and on a random encoder, 20000 steps
best_key = max(results, key=lambda k: results[k][1] + results[k][2])
model = results[best_key][0]
print(f"best: {best_key}", flush=True)

bc_cfg = policy.BCConfig(steps=20000, seed=0)
pol, log = policy.bc_train(model, train_ds, bc_cfg)
rep = policy.evaluate_policy(pol, model, list(train_ds.tasks), episodes_per_task=25, seed=0)
print(f"[{time.time()-t0:6.0f}s] BC(trained {best_key}): {rep['mean']:.3f} {rep['per_task']} "
      f"mse {log[-1]['mse']:.6f}", flush=True)

rand_model = encoders.Model.fresh(encoders.EncoderConfig(), seed=999)
pol_r, log_r = policy.bc_train(rand_model, train_ds, bc_cfg)
rep_r = policy.evaluate_policy(pol_r, rand_model, list(train_ds.tasks), episodes_per_task=25, seed=0)
print(f"[{time.time()-t0:6.0f}s] BC(random): {rep_r['mean']:.3f} {rep_r['per_task']} "
      f"mse {log_r[-1]['mse']:.6f}", flush=True)
