"""Skill discovery as exploration: PPO on task + diversity reward with a meta-learned mixing weight."""

__version__ = "0.1.0"
