"""Named pre/post-processor stubs with fixed simulated durations.

Real deployments plug model-specific processors here; these stubs exist so the
per-stage accounting has real pre/post intervals to measure. Durations are
per-request seconds and can be overridden per job in the pipeline section.
"""

PREPROCESSORS = {
    "passthrough": 0.0,
    "byte_resize": 0.002,   # image resize + tensor pack stand-in
    "tokenize": 0.001,      # text tokenizer stand-in
}

POSTPROCESSORS = {
    "passthrough": 0.0,
    "label_lookup": 0.0005,  # class id -> label table stand-in
}
