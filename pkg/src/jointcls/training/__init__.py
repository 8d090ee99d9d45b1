"""Trainers (supervised, PPO), losses, AdamW and LoRA adapters."""
