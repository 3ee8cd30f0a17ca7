"""Explainable TFT pipeline for greenhouse actuator control.

Library layout:
    autodiff  - reverse-mode engine the model is trained with
    dataio    - CSV ingestion, preprocessing, windowing, scaling, synthesis
    cluster   - kernel k-means over actuator profiles, frame labeling
    tft       - variable selection + LSTM + interpretable attention classifier
    train     - mini-batch training, prediction, evaluation metrics
    xai       - Shapley/LIME/VSN attributions, rank fusion, feature pruning
    simulate  - sensor -> gateway -> actuator closed-loop simulator
    charts    - dependency-free SVG chart emitters
    cli       - subcommand front end over the whole pipeline
"""

__version__ = "0.1.0"
