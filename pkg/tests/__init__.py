"""
Test package for the DREAMR planner.

Unit tests for the simulator, the offline solvers, the macro-action
policies, the global planner, the episode executor, the RHC baseline and
the experiment harness; long acceptance experiments are marked slow.
"""
