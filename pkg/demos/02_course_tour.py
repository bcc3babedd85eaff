"""Drive each obstacle course with a hand-written controller.

Shows what success looks like on every course before any learning: crouch
under bars, hop over gaps and onto steps, and what happens otherwise.
Trajectories are written next to this script as CSV.
"""
import os

import numpy as np

from sdax.envs import CAUSES, OBS_BLOCKS, CourseEnv, default_course, write_trajectory

DIST = OBS_BLOCKS["obstacle_distance"][0]


def drive(task, controller, name):
    env = CourseEnv(default_course(task), 1, 1)
    env.reset(np.random.default_rng(0), np.zeros((1, 1)))
    rows, total = [], 0.0
    for t in range(env.cfg.timeout):
        obs = env.obs_state()
        _, r, done, info = env.step(controller(obs[0]))
        total += r[0]
        rows.append({"t": t, "x": env.x[0], "z": env.z[0], "vx": env.vx[0], "vz": env.vz[0],
                     "body_angle": env.angle[0], "r_task": r[0], "r_div": 0.0, "done": int(done[0])})
        if done[0]:
            break
    path = os.path.join(os.path.dirname(__file__), f"tour_{name}.csv")
    write_trajectory(rows, path)
    print(f"{name:>14}: {CAUSES[int(info['cause'][0])]:>13} after {len(rows):3d} steps, "
          f"obstacles passed {int(info['obstacles_passed'][0])}, return {total:7.1f}")


walk = lambda obs: np.array([[0.5, -1.0, 0.0, 0.0]])  # noqa: E731
crouch = lambda obs: np.array([[1.0, -1.0, -1.0, 0.0]])  # noqa: E731
hop_gap = lambda obs: np.array([[0.5, 1.0 if obs[DIST] < 0.08 else -1.0, 0.0, 0.0]])  # noqa: E731
hop_step = lambda obs: np.array([[0.5, 1.0 if 0 < obs[DIST] < 0.25 else -1.0, 0.0, 0.0]])  # noqa: E731

drive("crawl", walk, "crawl-walk")
drive("crawl", crouch, "crawl-crouch")
drive("leap", walk, "leap-walk")
drive("leap", hop_gap, "leap-hop")
drive("climb", walk, "climb-walk")
drive("climb", hop_step, "climb-hop")
