"""Task-exposure-to-AI scoring pipeline.

Scores how well current AI technologies (text models, image processing,
robotics) can perform each O*NET job task using an ensemble of chat-model
judges, aggregates task scores into a per-occupation exposure index, and
runs desk-scale labor-market analytics on the result.
"""

__version__ = "0.1.0"
