//! Small convolutional classifier: the white-box oracle `log P(y|x)` and its
//! input gradient, training, dataset ingestion and model files.

mod dataset;
mod model;
mod persist;
mod train;

pub use dataset::{
    color_shape_image, color_shapes, ingest_idx, parse_idx_images, parse_idx_labels,
    LabeledDataset, SHAPE_CLASSES, SHAPE_SIZE,
};
pub use model::{argmax, default_architecture, parameter_shapes, CompiledModel, Layer, Model};
pub use persist::{
    load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use train::{accuracy, train, InputView, TrainConfig, TrainedModel};
