"""Feasibility probe for the acceptance experiments (scratch, not shipped)."""
import time

import numpy as np

from livkit import data, encoders, objectives, planner, policy, reward, training, world
from livkit.rng import make_rng

t0 = time.time()
train_ds = data.generate_dataset(data.GenConfig(episodes=400, policy="expert", horizon=40, seed=7))
held_ds = data.generate_dataset(data.GenConfig(episodes=40, policy="expert", horizon=40, seed=1007))
print(f"[{time.time()-t0:6.1f}s] datasets ready")

cfg = training.TrainConfig(objective="liv", steps=2000, batch=64, lr=1e-4, seed=0)
res = training.train(train_ds, cfg)
model = res.model
print(f"[{time.time()-t0:6.1f}s] trained; loss {res.metrics[0]['loss']:.4f} -> {res.metrics[-1]['loss']:.4f}")

# criterion 4: curve quality on held-out episodes
img_sp, txt_sp = [], []
for v in held_ds.videos:
    c_img = reward.cost_curve(model, v.frames, reward.ImageGoal(v.goal_frame))
    c_txt = reward.cost_curve(model, v.frames, reward.TextGoal(v.token_ids))
    img_sp.append(reward.curve_metrics(c_img)["spearman"])
    txt_sp.append(reward.curve_metrics(c_txt)["spearman"])
print(f"[{time.time()-t0:6.1f}s] curve spearman: image {np.mean(img_sp):.3f}  text {np.mean(txt_sp):.3f}")

# criterion 5: BC trained vs random encoder
bc_cfg = policy.BCConfig(steps=5000, seed=0)
pol, log = policy.bc_train(model, train_ds, bc_cfg)
rep = policy.evaluate_policy(pol, model, list(train_ds.tasks), episodes_per_task=25, seed=0)
print(f"[{time.time()-t0:6.1f}s] BC(trained): {rep['mean']:.3f} per-task {rep['per_task']} mse {log[-1]['mse']:.5f}")

rand_model = encoders.Model.fresh(encoders.EncoderConfig(), seed=999)
pol_r, log_r = policy.bc_train(rand_model, train_ds, bc_cfg)
rep_r = policy.evaluate_policy(pol_r, rand_model, list(train_ds.tasks), episodes_per_task=25, seed=0)
print(f"[{time.time()-t0:6.1f}s] BC(random):  {rep_r['mean']:.3f} per-task {rep_r['per_task']} mse {log_r[-1]['mse']:.5f}")

# criterion 6: oracle MPPI sanity
mppi = planner.default_config("mppi", seed=0)
rep_o = planner.run_planning_suite(planner.oracle_scorer_factory(), list(world.TASKS), mppi, episodes_per_task=13, seed=0)
print(f"[{time.time()-t0:6.1f}s] oracle MPPI: {rep_o['mean']:.3f} per-task {rep_o['per_task']}")

# criterion 7: learned text-goal MPPI (pre-fine-tune, just to see)
rep_l = planner.run_planning_suite(planner.text_goal_scorer_factory(model), list(train_ds.tasks), mppi, episodes_per_task=13, seed=0)
print(f"[{time.time()-t0:6.1f}s] learned MPPI: {rep_l['mean']:.3f} per-task {rep_l['per_task']}")

baseline = planner.default_config("mppi", iterations=0, num_sequences=1, seed=0)
rep_b = planner.run_planning_suite(planner.text_goal_scorer_factory(model), list(train_ds.tasks), baseline, episodes_per_task=13, seed=0)
print(f"[{time.time()-t0:6.1f}s] random baseline: {rep_b['mean']:.3f}")
