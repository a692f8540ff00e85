"""create run registry

Revision ID: 3b7e9c2d41a0
Revises:
Create Date: 2026-10-17 12:04:31.518204

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '3b7e9c2d41a0'
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None

run_status = sa.Enum('RUNNING', 'FINISHED', 'FAILED', name='run_status')
subtask_status = sa.Enum('DONE', 'SKIPPED', 'FAILED', name='subtask_status')


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table('runs',
    sa.Column('run_id', sa.Integer(), autoincrement=True, nullable=False),
    sa.Column('started_at', sa.TIMESTAMP(), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
    sa.Column('finished_at', sa.TIMESTAMP(), nullable=True),
    sa.Column('status', run_status, nullable=False),
    sa.Column('data_dir', sa.String(length=1000), nullable=False),
    sa.Column('out_dir', sa.String(length=1000), nullable=False),
    sa.Column('config', sa.JSON(), nullable=True),
    sa.PrimaryKeyConstraint('run_id')
    )
    op.create_table('iteration_metrics',
    sa.Column('id', sa.Integer(), autoincrement=True, nullable=False),
    sa.Column('run_id', sa.Integer(), nullable=False),
    sa.Column('iteration', sa.Integer(), nullable=False),
    sa.Column('hits1', sa.Float(), nullable=True),
    sa.Column('hits5', sa.Float(), nullable=True),
    sa.Column('mrr', sa.Float(), nullable=True),
    sa.Column('coverage_recall', sa.Float(), nullable=True),
    sa.Column('candidate_recall', sa.Float(), nullable=True),
    sa.Column('n_pseudo', sa.Integer(), nullable=True),
    sa.Column('n_predictions', sa.Integer(), nullable=True),
    sa.Column('n_subtasks', sa.Integer(), nullable=True),
    sa.Column('n_failed', sa.Integer(), nullable=True),
    sa.Column('seconds', sa.Float(), nullable=True),
    sa.ForeignKeyConstraint(['run_id'], ['runs.run_id'], ),
    sa.PrimaryKeyConstraint('id')
    )
    op.create_table('subtasks',
    sa.Column('id', sa.Integer(), autoincrement=True, nullable=False),
    sa.Column('run_id', sa.Integer(), nullable=False),
    sa.Column('iteration', sa.Integer(), nullable=False),
    sa.Column('group', sa.Integer(), nullable=False),
    sa.Column('source_size', sa.Integer(), nullable=True),
    sa.Column('target_size', sa.Integer(), nullable=True),
    sa.Column('n_candidates', sa.Integer(), nullable=True),
    sa.Column('n_seeds', sa.Integer(), nullable=True),
    sa.Column('status', subtask_status, nullable=False),
    sa.Column('seconds', sa.Float(), nullable=True),
    sa.Column('message', sa.Text(), nullable=True),
    sa.ForeignKeyConstraint(['run_id'], ['runs.run_id'], ),
    sa.PrimaryKeyConstraint('id')
    )


def downgrade() -> None:
    """Downgrade schema."""
    op.drop_table('subtasks')
    op.drop_table('iteration_metrics')
    op.drop_table('runs')
    subtask_status.drop(op.get_bind(), checkfirst=True)
    run_status.drop(op.get_bind(), checkfirst=True)
