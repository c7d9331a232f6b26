"""servebench: a distributed benchmark harness for model-inference serving.

A leader schedules declarative benchmark jobs onto follower workers; workers
drive synthetic workloads against a simulated (roofline-consistent) or
external HTTP serving backend, stamp every pipeline stage, and feed an
analysis stage (roofline, latency CDFs, heat maps, cost model, recommender,
leaderboard).
"""

__version__ = "0.1.0"
