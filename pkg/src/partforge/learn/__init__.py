"""Point-cloud autoencoder, state encoding, masked Double-DQN and multi-task distillation."""
from partforge.learn.autoencoder import (
    PointCloudAutoEncoder,
    batch_chamfer,
    chamfer,
    encode_part,
    normalize_cloud,
    part_cloud,
    part_clouds,
)
from partforge.learn.checkpoint import (
    load_ae,
    load_agent,
    load_checkpoint,
    load_qnet,
    save_ae,
    save_agent,
    save_checkpoint,
    save_qnet,
)
from partforge.learn.distill import (
    LAMBDA,
    DistilledQPolicy,
    ExpertDataset,
    collect_expert_data,
    distill_loss,
    distill_train,
)
from partforge.learn.dqn import (
    DDQNAgent,
    ReplayBuffer,
    ddqn_loss_and_grads,
    ddqn_targets,
    ddqn_update,
    greedy_rollout,
    linear_epsilon,
    q_columns,
    q_forward,
    run_episode,
    select_action,
)
from partforge.learn.encoding import (
    PAPER_CAPS,
    build_state_encoding,
    encoding_length,
    grasp_summary,
    part_features,
)
from partforge.learn.nn import MLP, Adam, finite_difference

__all__ = [
    "LAMBDA", "MLP", "PAPER_CAPS", "Adam", "DDQNAgent", "DistilledQPolicy", "ExpertDataset",
    "PointCloudAutoEncoder", "ReplayBuffer", "batch_chamfer", "build_state_encoding", "chamfer",
    "collect_expert_data", "ddqn_loss_and_grads", "ddqn_targets", "ddqn_update", "distill_loss", "distill_train", "encode_part",
    "encoding_length", "finite_difference", "grasp_summary", "greedy_rollout", "linear_epsilon", "load_ae",
    "load_agent", "load_checkpoint", "load_qnet", "normalize_cloud", "part_cloud", "part_clouds", "part_features",
    "q_columns", "q_forward", "run_episode", "save_ae", "save_agent", "save_checkpoint", "save_qnet", "select_action",
]
